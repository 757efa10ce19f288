// Umbrella header.
#pragma once

#include "bounds.hpp"
#include "core.hpp"
#include "data.hpp"
#include "etf.hpp"
#include "experiments.hpp"
#include "featnet.hpp"
#include "features.hpp"
#include "margin.hpp"
#include "ncmetrics.hpp"
#include "serialize.hpp"
#include "ufm.hpp"
