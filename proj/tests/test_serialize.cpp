#include "ncgen/experiments.hpp"

#include <gtest/gtest.h>

using namespace ncgen;

TEST(FormatDouble, ShortestRoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_TRUE(std::isnan(parse_double(format_double(std::nan("")))));
  EXPECT_THROW(parse_double("1.5x"), IoError);
}

TEST(RoundTrip, Etf) {
  const auto e = make_etf(4, 7, 2.5, 3);
  const auto back = etf_from_json(Json::parse(dump(etf_to_json(e))));
  EXPECT_EQ(back.matrix, e.matrix);
  EXPECT_EQ(back.alpha, e.alpha);
  EXPECT_EQ(back.num_classes, 4);
  EXPECT_EQ(back.dim, 7);
}

TEST(RoundTrip, EtfMatrixIsRowMajor) {
  const auto e = make_etf(3, 4, 1.0, 0);
  const auto j = etf_to_json(e);
  ASSERT_EQ(j["matrix"].size(), 4u);
  ASSERT_EQ(j["matrix"][0].size(), 3u);
  EXPECT_EQ(j["matrix"][1][2].get<double>(), e.matrix(1, 2));
}

TEST(RoundTrip, EtfParseRejectsNonEtf) {
  auto j = etf_to_json(make_etf(3, 4, 1.0, 0));
  j["matrix"][0][0] = 5.0;
  EXPECT_THROW(etf_from_json(j), InvalidArgument);
}

TEST(RoundTrip, Transforms) {
  const auto p = EtfTransform::permute({2, 0, 1});
  EXPECT_EQ(transform_from_json(transform_to_json(p)).permutation, p.permutation);
  const auto r = EtfTransform::rotate(random_rotation(4, 2));
  EXPECT_EQ(*transform_from_json(Json::parse(transform_to_json(r).dump())).rotation, *r.rotation);
}

TEST(RoundTrip, TraceJsonl) {
  TrainTrace t;
  Checkpoint a;
  a.step = 1;
  a.ce_loss = 0.123456789012345;
  a.p_min = -1e-300;
  a.nc1 = 3.0;
  Checkpoint b = a;
  b.step = 2;
  b.train_acc = 0.5;
  b.margin_std = 1.0 / 3.0;
  b.test_acc = 0.25;
  b.test_ce = 7.0;
  t.checkpoints = {a, b};
  const auto text = trace_to_jsonl(t);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(trace_from_jsonl(text), t);
  EXPECT_EQ(trace_from_jsonl(trace_to_jsonl(t, {{"trial_id", 3}})), t);
}

TEST(RoundTrip, TraceSummaryCsv) {
  TrainTrace t;
  Checkpoint a;
  a.step = 10;
  a.ce_loss = 0.5;
  a.p_min = 2.0;
  t.checkpoints = {a};
  EXPECT_EQ(trace_summary_csv(t), "step,ce_loss,p_min\n10,0.5,2\n");
}

TEST(RoundTrip, BoundReport) {
  MarginBoundInputs in;
  in.gammas = Matrix::Ones(2, 2);
  in.class_priors = Vector::Constant(2, 0.5);
  in.class_sizes = {10, 10};
  in.rademacher = 0.3;
  in.K = 1.0;
  const auto r = margin_bound(in);
  const auto back = bound_report_from_json(Json::parse(dump(bound_report_to_json(r))));
  EXPECT_EQ(back, r);
  EXPECT_NEAR(recombine(back), back.value, 1e-12);
}

TEST(RoundTrip, Mlp) {
  const auto p = init_mlp({2, 5, 3}, Activation::Tanh, 4);
  EXPECT_EQ(mlp_from_json(Json::parse(dump(mlp_to_json(p)))), p);
}

TEST(RoundTrip, Configs) {
  FitConfig f;
  f.learning_rate = 0.0125;
  f.lr_milestones = {0.5};
  f.seed = 123456789012345ULL;
  const auto f2 = fit_config_from_json(fit_config_to_json(f));
  EXPECT_EQ(fit_config_to_json(f2), fit_config_to_json(f));
  UfmConfig u;
  u.steps = 77;
  u.freeze_classifier = true;
  EXPECT_EQ(ufm_config_to_json(ufm_config_from_json(ufm_config_to_json(u))), ufm_config_to_json(u));
  SyntheticSpec s = default_sweep_data();
  s.similarity_matrix = Matrix::Zero(6, 6);
  EXPECT_EQ(spec_to_json(spec_from_json(spec_to_json(s))), spec_to_json(s));
}

TEST(Configs, UnknownKeysAndBadTypesRejected) {
  EXPECT_THROW(fit_config_from_json({{"learning_rte", 0.1}}), InvalidArgument);
  EXPECT_THROW(fit_config_from_json({{"epochs", "many"}}), InvalidArgument);
  EXPECT_THROW(ufm_config_from_json({{"steps", 0}}), InvalidArgument);
  EXPECT_THROW(spec_from_json({{"family", "spirals"}}), InvalidArgument);
}

TEST(Configs, ScalarSupportRadiusBroadcasts) {
  const auto s = spec_from_json({{"C", 3}, {"support_radius", 1.5}});
  EXPECT_EQ(s.support_radius, (std::vector<double>{1.5, 1.5, 1.5}));
}

TEST(RoundTrip, DatasetCsv) {
  SyntheticSpec s = default_sweep_data();
  s.per_class = 7;
  s.seed = 2;
  const auto pair = generate(s);
  const auto text = dataset_to_csv(pair);
  EXPECT_EQ(text.substr(0, text.find('\n')), "x_1,x_2,label,split");
  const auto back = dataset_from_csv(text, s);
  EXPECT_EQ(back.train.inputs, pair.train.inputs);
  EXPECT_EQ(back.test.inputs, pair.test.inputs);
  EXPECT_EQ(back.train.labels, pair.train.labels);
  EXPECT_EQ(back.test.labels, pair.test.labels);
}

TEST(RoundTrip, SweepRows) {
  SweepRow r;
  r.trial_id = 4;
  r.transform_kind = "rot";
  r.transform_seed = 18446744073709551557ULL;
  r.included = true;
  r.tpt_epoch = 31;
  r.final_train_acc = 1.0;
  r.test_acc = 0.9991666666666666;
  r.test_ce = 0.0123;
  r.p_min = 3.25;
  r.margin_std = 0.7;
  r.nc1 = 0.01;
  r.nc2 = 0.02;
  r.nc3 = 0.03;
  r.nc4 = 1.0;
  r.best_epoch = 40;
  r.best_test_acc = 1.0;
  r.best_test_ce = 0.01;
  r.best_margin_std = 0.6;
  const auto back = sweep_rows_from_csv(sweep_rows_csv({r}));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(sweep_rows_csv(back), sweep_rows_csv({r}));
  EXPECT_EQ(back[0].transform_seed, r.transform_seed);
  EXPECT_EQ(back[0].test_acc, r.test_acc);
}

TEST(Aggregate, StatsAndZeroSpread) {
  const auto s = stats_of({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
  EXPECT_DOUBLE_EQ(s.min, 1.0);
  EXPECT_DOUBLE_EQ(s.max, 4.0);
  const double v = 0.9991666666666666;
  EXPECT_EQ(stats_of({v, v, v}).std, 0.0);
  EXPECT_EQ(stats_of({v}).std, 0.0);
}

TEST(Aggregate, JsonRoundTrip) {
  std::map<std::string, Stats> agg{{"a", {1, 2, 3, 4}}, {"b", {0.1, 0, 0.1, 0.1}}};
  const auto back = aggregate_from_json(Json::parse(aggregate_to_json(agg).dump()));
  EXPECT_EQ(back.at("a").max, 4.0);
  EXPECT_EQ(back.at("b").mean, 0.1);
}
