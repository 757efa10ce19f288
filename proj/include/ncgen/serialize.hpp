// JSON / JSONL / CSV encodings of the library's records, plus file helpers.
// Every emit function has a parse counterpart that restores the value exactly.
#pragma once

#include "bounds.hpp"
#include "data.hpp"
#include "featnet.hpp"
#include "ufm.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace ncgen {

using Json = nlohmann::json;

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw IoError("not a number: '" + s + "'");
  return v;
}

// ---------------------------------------------------------------------------
// files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failed for " + path.string());
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// config reading helpers

/// Rejects keys outside `allowed` so that misspelt options fail loudly.
inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items())
    require(ok.count(item.key()) > 0, where + ": unknown key '" + item.key() + "'");
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw InvalidArgument(where + ": key '" + key + "' has the wrong type");
  }
}

// ---------------------------------------------------------------------------
// matrices

/// Row-major array of arrays; NaN entries become null.
inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (std::isnan(m(i, j)))
        row.push_back(nullptr);
      else
        row.push_back(m(i, j));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j, const std::string& where) {
  require(j.is_array(), where + ": matrix must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols, where + ": ragged matrix");
    for (Eigen::Index k = 0; k < cols; ++k) {
      const auto& v = row[static_cast<std::size_t>(k)];
      if (v.is_null())
        m(i, k) = std::numeric_limits<double>::quiet_NaN();
      else if (v.is_number())
        m(i, k) = v.get<double>();
      else
        throw InvalidArgument(where + ": matrix entries must be numbers");
    }
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vector_from_json(const Json& j, const std::string& where) {
  require(j.is_array(), where + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), where + ": entries must be numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

// ---------------------------------------------------------------------------
// ETF

inline Json etf_to_json(const SimplexEtf& e) {
  return {{"C", e.num_classes}, {"d", e.dim}, {"alpha", e.alpha}, {"matrix", matrix_to_json(e.matrix)}};
}

/// Parses and re-validates the ETF structure.
inline SimplexEtf etf_from_json(const Json& j) {
  check_keys(j, {"C", "d", "alpha", "matrix"}, "etf");
  require(j.contains("C") && j.contains("d") && j.contains("alpha") && j.contains("matrix"),
          "etf: need C, d, alpha and matrix");
  SimplexEtf e;
  read_opt(j, "C", e.num_classes, "etf");
  read_opt(j, "d", e.dim, "etf");
  read_opt(j, "alpha", e.alpha, "etf");
  e.matrix = matrix_from_json(j.at("matrix"), "etf.matrix");
  require(e.matrix.rows() == e.dim && e.matrix.cols() == e.num_classes, "etf: matrix shape does not match C, d");
  check_etf_invariants(e.matrix, "etf");
  return e;
}

inline Json transform_to_json(const EtfTransform& t) {
  if (t.kind == TransformKind::Permutation) return {{"kind", "perm"}, {"permutation", t.permutation.value()}};
  return {{"kind", "rot"}, {"rotation", matrix_to_json(t.rotation.value())}};
}

inline EtfTransform transform_from_json(const Json& j) {
  check_keys(j, {"kind", "permutation", "rotation"}, "transform");
  const std::string kind = j.value("kind", "");
  if (kind == "perm") {
    require(j.contains("permutation"), "transform: perm needs 'permutation'");
    IntVector p;
    read_opt(j, "permutation", p, "transform");
    return EtfTransform::permute(std::move(p));
  }
  require(kind == "rot", "transform: kind must be 'perm' or 'rot'");
  require(j.contains("rotation"), "transform: rot needs 'rotation'");
  return EtfTransform::rotate(matrix_from_json(j.at("rotation"), "transform.rotation"));
}

// ---------------------------------------------------------------------------
// traces

inline Json checkpoint_to_json(const Checkpoint& c) {
  Json j = {{"step", c.step},
            {"ce_loss", c.ce_loss},
            {"p_min", c.p_min},
            {"nc1", c.nc1},
            {"nc2", c.nc2},
            {"nc3_deviation", c.nc3_deviation},
            {"nc4_agreement", c.nc4_agreement},
            {"sandwich_lower", c.sandwich_lower},
            {"sandwich_upper", c.sandwich_upper}};
  if (c.train_acc) j["train_acc"] = *c.train_acc;
  if (c.margin_std) j["margin_std"] = *c.margin_std;
  if (c.test_acc) j["test_acc"] = *c.test_acc;
  if (c.test_ce) j["test_ce"] = *c.test_ce;
  return j;
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  Checkpoint c;
  const std::string w = "checkpoint";
  read_opt(j, "step", c.step, w);
  read_opt(j, "ce_loss", c.ce_loss, w);
  read_opt(j, "p_min", c.p_min, w);
  read_opt(j, "nc1", c.nc1, w);
  read_opt(j, "nc2", c.nc2, w);
  read_opt(j, "nc3_deviation", c.nc3_deviation, w);
  read_opt(j, "nc4_agreement", c.nc4_agreement, w);
  read_opt(j, "sandwich_lower", c.sandwich_lower, w);
  read_opt(j, "sandwich_upper", c.sandwich_upper, w);
  auto opt = [&](const char* key, std::optional<double>& out) {
    if (j.contains(key)) out = j.at(key).get<double>();
  };
  opt("train_acc", c.train_acc);
  opt("margin_std", c.margin_std);
  opt("test_acc", c.test_acc);
  opt("test_ce", c.test_ce);
  return c;
}

/// One compact JSON object per line. `extra` fields (e.g. a trial id) are
/// prepended to every line.
inline std::string trace_to_jsonl(const TrainTrace& t, const Json& extra = Json::object()) {
  std::string out;
  for (const auto& c : t.checkpoints) {
    Json line = extra;
    line.update(checkpoint_to_json(c));
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline TrainTrace trace_from_jsonl(const std::string& text) {
  TrainTrace t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.checkpoints.push_back(checkpoint_from_json(parse_json(line, "trace line")));
  }
  return t;
}

/// step, ce_loss, p_min: the two-axis margin-dynamics plot data.
inline std::string trace_summary_csv(const TrainTrace& t) {
  std::string out = "step,ce_loss,p_min\n";
  for (const auto& c : t.checkpoints)
    out += std::to_string(c.step) + "," + format_double(c.ce_loss) + "," + format_double(c.p_min) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// bounds

inline Json bound_report_to_json(const BoundReport& r) {
  Json terms = Json::object();
  for (const auto& [k, v] : r.terms) terms[k] = v;
  return {{"theorem", to_string(r.theorem)}, {"terms", terms}, {"value", r.value}};
}

inline BoundReport bound_report_from_json(const Json& j) {
  BoundReport r;
  const std::string name = j.at("theorem").get<std::string>();
  if (name == "MarginBound")
    r.theorem = BoundKind::MarginBound;
  else if (name == "CoveringBound")
    r.theorem = BoundKind::CoveringBound;
  else if (name == "HoeffdingBound")
    r.theorem = BoundKind::HoeffdingBound;
  else
    throw InvalidArgument("unknown theorem '" + name + "'");
  for (const auto& item : j.at("terms").items()) r.terms[item.key()] = item.value().get<double>();
  r.value = j.at("value").get<double>();
  return r;
}

inline Json margin_report_to_json(const MarginReport& m) {
  return {{"p_min", m.p_min},
          {"separable", m.separable},
          {"margin_std", m.margin_std},
          {"pairwise", matrix_to_json(m.pairwise)},
          {"normalized_pairwise", matrix_to_json(m.normalized_pairwise)}};
}

inline Json nc_report_to_json(const NcReport& r) {
  Json j = {{"nc1", r.nc1}, {"nc2", r.nc2}, {"nc2_raw", r.nc2_raw}, {"nc3", r.nc3}, {"nc4", r.nc4}};
  if (!r.nc2_flagged.empty()) j["nc2_flagged"] = r.nc2_flagged;
  return j;
}

// ---------------------------------------------------------------------------
// network parameters

inline Json mlp_to_json(const MlpParams& p) {
  Json layers = Json::array();
  for (std::size_t l = 0; l < p.num_layers(); ++l)
    layers.push_back({{"weight", matrix_to_json(p.weights[l])}, {"bias", vector_to_json(p.biases[l])}});
  return {{"widths", p.widths}, {"activation", to_string(p.activation)}, {"layers", layers}};
}

inline MlpParams mlp_from_json(const Json& j) {
  check_keys(j, {"widths", "activation", "layers"}, "mlp");
  MlpParams p;
  read_opt(j, "widths", p.widths, "mlp");
  p.activation = activation_from_string(j.value("activation", "relu"));
  require(j.contains("layers") && j.at("layers").is_array(), "mlp: missing layers");
  for (const auto& layer : j.at("layers")) {
    p.weights.push_back(matrix_from_json(layer.at("weight"), "mlp.weight"));
    p.biases.push_back(vector_from_json(layer.at("bias"), "mlp.bias"));
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// configs

inline Json ufm_config_to_json(const UfmConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"steps", c.steps},
          {"weight_decay", c.weight_decay},   {"freeze_classifier", c.freeze_classifier},
          {"checkpoint_every", c.checkpoint_every}, {"seed", c.seed},
          {"init_scale", c.init_scale}};
}

inline UfmConfig ufm_config_from_json(const Json& j, UfmConfig c = {}) {
  const std::string w = "ufm";
  check_keys(j, {"learning_rate", "steps", "weight_decay", "freeze_classifier", "checkpoint_every", "seed", "init_scale"}, w);
  read_opt(j, "learning_rate", c.learning_rate, w);
  read_opt(j, "steps", c.steps, w);
  read_opt(j, "weight_decay", c.weight_decay, w);
  read_opt(j, "freeze_classifier", c.freeze_classifier, w);
  read_opt(j, "checkpoint_every", c.checkpoint_every, w);
  read_opt(j, "seed", c.seed, w);
  read_opt(j, "init_scale", c.init_scale, w);
  c.validate();
  return c;
}

inline Json fit_config_to_json(const FitConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},   {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"seed", c.seed},
          {"target_train_acc", c.target_train_acc}, {"max_extra_epochs", c.max_extra_epochs},
          {"lr_milestones", c.lr_milestones}, {"lr_decay", c.lr_decay}};
}

inline FitConfig fit_config_from_json(const Json& j, FitConfig c = {}) {
  const std::string w = "fit";
  check_keys(j, {"learning_rate", "momentum", "weight_decay", "epochs", "batch_size", "seed", "target_train_acc",
                 "max_extra_epochs", "lr_milestones", "lr_decay"}, w);
  read_opt(j, "learning_rate", c.learning_rate, w);
  read_opt(j, "momentum", c.momentum, w);
  read_opt(j, "weight_decay", c.weight_decay, w);
  read_opt(j, "epochs", c.epochs, w);
  read_opt(j, "batch_size", c.batch_size, w);
  read_opt(j, "seed", c.seed, w);
  read_opt(j, "target_train_acc", c.target_train_acc, w);
  read_opt(j, "max_extra_epochs", c.max_extra_epochs, w);
  read_opt(j, "lr_milestones", c.lr_milestones, w);
  read_opt(j, "lr_decay", c.lr_decay, w);
  c.validate();
  return c;
}

inline Json spec_to_json(const SyntheticSpec& s) {
  Json j = {{"family", to_string(s.family)},
            {"C", s.C},
            {"d_in", s.d_in},
            {"per_class", s.per_class},
            {"support_radius", s.support_radius},
            {"seed", s.seed},
            {"class_std", s.class_std},
            {"center_distance", s.center_distance},
            {"ring_spacing", s.ring_spacing},
            {"anisotropy", s.anisotropy},
            {"tight_similarity", s.tight_similarity}};
  if (s.similarity_matrix) j["similarity_matrix"] = matrix_to_json(*s.similarity_matrix);
  return j;
}

/// A scalar support_radius is broadcast to every class.
inline SyntheticSpec spec_from_json(const Json& j, SyntheticSpec s = {}) {
  const std::string w = "data";
  check_keys(j, {"family", "C", "d_in", "per_class", "support_radius", "similarity_matrix", "seed", "class_std",
                 "center_distance", "ring_spacing", "anisotropy", "tight_similarity"}, w);
  if (j.contains("family")) s.family = family_from_string(j.at("family").get<std::string>());
  read_opt(j, "C", s.C, w);
  read_opt(j, "d_in", s.d_in, w);
  read_opt(j, "per_class", s.per_class, w);
  read_opt(j, "seed", s.seed, w);
  read_opt(j, "class_std", s.class_std, w);
  read_opt(j, "center_distance", s.center_distance, w);
  read_opt(j, "ring_spacing", s.ring_spacing, w);
  read_opt(j, "anisotropy", s.anisotropy, w);
  read_opt(j, "tight_similarity", s.tight_similarity, w);
  if (j.contains("support_radius")) {
    const auto& r = j.at("support_radius");
    if (r.is_number())
      s.support_radius.assign(static_cast<std::size_t>(std::max(s.C, 0)), r.get<double>());
    else
      read_opt(j, "support_radius", s.support_radius, w);
  }
  if (s.support_radius.empty()) s.support_radius.assign(static_cast<std::size_t>(std::max(s.C, 0)), 3.0);
  if (j.contains("similarity_matrix")) s.similarity_matrix = matrix_from_json(j.at("similarity_matrix"), w);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// datasets

inline std::string dataset_csv_header(int d_in) {
  std::string h;
  for (int k = 1; k <= d_in; ++k) h += "x_" + std::to_string(k) + ",";
  return h + "label,split\n";
}

inline std::string dataset_csv_rows(const LabeledDataset& ds) {
  std::string out;
  for (int i = 0; i < ds.num_samples(); ++i) {
    for (Eigen::Index k = 0; k < ds.inputs.rows(); ++k) out += format_double(ds.inputs(k, i)) + ",";
    out += std::to_string(ds.labels[static_cast<std::size_t>(i)]) + "," + to_string(ds.split) + "\n";
  }
  return out;
}

inline std::string dataset_to_csv(const DatasetPair& pair) {
  return dataset_csv_header(static_cast<int>(pair.train.inputs.rows())) + dataset_csv_rows(pair.train) +
         dataset_csv_rows(pair.test);
}

/// Inverse of dataset_to_csv; `spec` is attached to both splits.
inline DatasetPair dataset_from_csv(const std::string& text, const SyntheticSpec& spec) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset csv: empty");
  const auto cols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  const int d_in = cols - 2;
  if (d_in < 1) throw IoError("dataset csv: bad header");
  std::vector<std::vector<double>> xs[2];
  IntVector ys[2];
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (static_cast<int>(fields.size()) != cols) throw IoError("dataset csv: wrong field count");
    const int s = fields.back() == "train" ? 0 : fields.back() == "test" ? 1 : -1;
    if (s < 0) throw IoError("dataset csv: unknown split '" + fields.back() + "'");
    std::vector<double> x(static_cast<std::size_t>(d_in));
    for (int k = 0; k < d_in; ++k) x[static_cast<std::size_t>(k)] = parse_double(fields[static_cast<std::size_t>(k)]);
    xs[s].push_back(std::move(x));
    ys[s].push_back(std::stoi(fields[static_cast<std::size_t>(d_in)]));
  }
  DatasetPair pair;
  LabeledDataset* out[2] = {&pair.train, &pair.test};
  for (int s = 0; s < 2; ++s) {
    out[s]->spec = spec;
    out[s]->split = s == 0 ? Split::Train : Split::Test;
    out[s]->labels = ys[s];
    out[s]->inputs.resize(d_in, static_cast<Eigen::Index>(xs[s].size()));
    for (std::size_t i = 0; i < xs[s].size(); ++i)
      for (int k = 0; k < d_in; ++k) out[s]->inputs(k, static_cast<Eigen::Index>(i)) = xs[s][i][static_cast<std::size_t>(k)];
  }
  return pair;
}

}  // namespace ncgen
