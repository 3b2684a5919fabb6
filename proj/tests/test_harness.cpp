#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hba/cli.hpp"
#include "hba/pipeline.hpp"

using namespace hba;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / "hba_test_harness" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunConfig small_config(const fs::path& dir) {
  RunConfig c;
  c.counts = dir / "data" / "counts.txt";
  c.forcing = dir / "data" / "forcing.txt";
  c.cache_dir = dir / "cache";
  c.output_dir = dir / "out";
  c.model.n_beta = 4;
  c.model.n_alpha = 4;
  c.model.hyper.q_min = 4;
  c.model.hyper.q_max = 9;
  c.model.hyper.m_max = 4;
  c.sampler.iterations = 120;
  c.sampler.burn_in = 60;
  c.holdout = {2010};
  c.seed = 3;
  return c;
}

std::map<std::string, std::string> hash_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = sha256_file(e.path());
  return out;
}

}  // namespace

TEST(Config, ParseRoundTripAndErrors) {
  std::istringstream in(
      "# comment\n counts = a/c.txt\nforcing=f.txt   # trailing\nmethod = le\nknn_grid = 6, 9,12\n"
      "ref_start = 1970-01\nholdout = 1999,2009,2014\nseed = 42\njacobian = false\n");
  RunConfig c = parse_config(in, "/base");
  EXPECT_EQ(c.counts, fs::path("/base/a/c.txt"));
  EXPECT_EQ(c.model.method, DimredMethod::kLaplacianEigenmap);
  EXPECT_EQ(c.model.hyper.knn_grid, (std::vector<int>{6, 9, 12}));
  EXPECT_EQ(c.holdout, (std::vector<int>{1999, 2009, 2014}));
  EXPECT_EQ(c.seed, 42u);
  EXPECT_FALSE(c.sampler.jacobian);
  EXPECT_EQ(c.run_label(), "HBA2");

  std::istringstream again(config_text(c));
  RunConfig d = parse_config(again);
  EXPECT_EQ(config_text(d), config_text(c));

  std::istringstream bad_key("colour = blue\n");
  EXPECT_THROW(parse_config(bad_key), InvalidArgument);
  std::istringstream bad_val("n_beta = many\n");
  try {
    parse_config(bad_val);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("n_beta"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  std::istringstream no_eq("n_beta 4\n");
  EXPECT_THROW(parse_config(no_eq), ParseError);
}

TEST(Config, FingerprintTracksPreparationKeysOnly) {
  RunConfig c;
  c.holdout = {2000};
  Inputs in;
  in.counts_sha = "a";
  in.forcing_sha = "b";
  const Target t{2000, 10};
  const std::string base = prepare_fingerprint(c, in, t);
  RunConfig s = c;
  s.sampler.iterations = 5;
  s.seed = 99;
  EXPECT_EQ(prepare_fingerprint(s, in, t), base);
  RunConfig q = c;
  q.model.hyper.q_max = 45;
  EXPECT_NE(prepare_fingerprint(q, in, t), base);
  in.forcing_sha = "c";
  EXPECT_NE(prepare_fingerprint(c, in, t), base);
}

TEST(Evaluate, ClosedForms) {
  Eigen::VectorXd o(5);
  o << 1, 4, 2, 8, 5;
  Score s = evaluate(o, o);
  EXPECT_EQ(s.mspe, 0.0);
  ASSERT_TRUE(s.corr);
  EXPECT_NEAR(*s.corr, 1.0, 1e-15);
  Score shift = evaluate((o.array() + 3.0).matrix(), o);
  EXPECT_NEAR(shift.mspe, 9.0, 1e-12);
  EXPECT_NEAR(*shift.corr, 1.0, 1e-15);

  Eigen::VectorXd f(5);
  f << 2, 2, 7, 1, 0;
  Score ab = evaluate(f, o), ba = evaluate(o, f);
  EXPECT_DOUBLE_EQ(ab.mspe, ba.mspe);
  EXPECT_DOUBLE_EQ(*ab.corr, *ba.corr);

  EXPECT_FALSE(evaluate(f, Eigen::VectorXd::Constant(5, 3.0)).corr.has_value());
  EXPECT_EQ(format_corr(std::nullopt), "undefined");
  EXPECT_THROW(evaluate(f, Eigen::VectorXd::Zero(4)), InvalidArgument);
}

TEST(Baselines, ConstantCountsScoreZero) {
  CountMatrix y = CountMatrix::Constant(4, 10, 7);
  const std::vector<int> tr = {0, 1, 2, 3, 4, 5};
  EXPECT_EQ(mspe(climatology(y, tr), y.col(8).cast<double>()), 0.0);
  EXPECT_EQ(mspe(persistence(y, tr, 8), y.col(8).cast<double>()), 0.0);
  y(0, 5) = 9;
  EXPECT_EQ(persistence(y, tr, 8)(0), 9.0);
  EXPECT_EQ(persistence(y, tr, 3)(0), 7.0);
}

TEST(Synthetic, PlantedCycleRecursExactly) {
  SyntheticSpec spec;
  spec.system = LatentSystem::kPlantedCycle;
  SyntheticData d = generate_synthetic(spec);
  EXPECT_EQ(d.counts.n_locations(), 30);
  EXPECT_EQ(d.counts.n_periods(), 41);
  for (int t = 0; t + spec.period < spec.n_periods; ++t) {
    EXPECT_EQ(d.truth.intensity.col(t), d.truth.intensity.col(t + spec.period));
    EXPECT_EQ(d.truth.exact_analog[static_cast<std::size_t>(t + spec.period)], t);
  }
  SyntheticData again = generate_synthetic(spec);
  EXPECT_EQ(again.counts.counts, d.counts.counts);
  EXPECT_EQ(again.forcing.values, d.forcing.values);
  spec.seed = 2;
  EXPECT_NE(generate_synthetic(spec).counts.counts, d.counts.counts);
}

TEST(Synthetic, EofsSpanPlantedPatterns) {
  for (LatentSystem sys : {LatentSystem::kPlantedCycle, LatentSystem::kLorenz63}) {
    SyntheticSpec spec;
    spec.system = sys;
    SyntheticData d = generate_synthetic(spec);
    const int k = static_cast<int>(d.truth.patterns.cols());
    EofResult e = compute_eofs(d.forcing.values, k);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(e.phi.transpose() * d.truth.patterns);
    // Cosines of the principal angles are all one.
    EXPECT_GT(svd.singularValues().minCoeff(), std::cos(1e-6)) << to_string(sys);
  }
}

TEST(Synthetic, LorenzCountsNonnegativeAndScaled) {
  SyntheticSpec spec;
  spec.system = LatentSystem::kLorenz63;
  spec.n_y = 50;
  SyntheticData d = generate_synthetic(spec);
  EXPECT_TRUE((d.truth.intensity.array() >= 0.0).all());
  EXPECT_NEAR(d.truth.intensity.mean(), spec.count_scale, 1e-9);
  EXPECT_GT(d.truth.intensity.rowwise().mean().minCoeff(), 0.0);
}

TEST(Model, NormalizeBasisKeepsProduct) {
  Factorization f;
  f.psi = Eigen::MatrixXd::Random(6, 3).cwiseAbs();
  f.b = Eigen::MatrixXd::Random(3, 5).cwiseAbs();
  const Eigen::MatrixXd before = f.psi * f.b;
  normalize_basis(f);
  EXPECT_LT((f.psi * f.b - before).cwiseAbs().maxCoeff(), 1e-14);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(f.psi.col(j).norm(), 1.0, 1e-14);
}

TEST(Model, NoFutureForcingLeaks) {
  SyntheticSpec spec;
  SyntheticData d = generate_synthetic(spec);
  ModelSettings s;
  s.n_beta = 4;
  s.n_alpha = 4;
  s.hyper.q_min = 4;
  s.hyper.q_max = 9;
  s.hyper.m_max = 4;
  const int target = 30;
  PreparedModel a = prepare_model(d.counts, d.forcing, target, s);
  const int anchor = a.alignment(target);
  ForcingField changed = d.forcing;
  changed.values.rightCols(changed.n_periods() - anchor - 1).setConstant(1e3);
  PreparedModel b = prepare_model(d.counts, changed, target, s);
  EXPECT_EQ(a.cache.distances(6), b.cache.distances(6));
  EXPECT_EQ(a.training, b.training);
  for (int t : a.training) EXPECT_LT(t, target);
  EXPECT_EQ(a.anomalies.n_periods(), anchor + 1);
}

TEST(Model, StageErrorsAreTagged) {
  SyntheticSpec spec;
  SyntheticData d = generate_synthetic(spec);
  ModelSettings s;
  s.n_beta = 4;
  s.n_alpha = 4;
  s.hyper.q_min = 4;
  s.hyper.q_max = 9;
  s.hyper.m_max = 4;
  s.n_alpha = 500;
  try {
    prepare_model(d.counts, d.forcing, 30, s);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "dimred");
  }
  s.n_alpha = 4;
  s.hyper.m_max = 15;
  try {
    prepare_model(d.counts, d.forcing, 5, s);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "align");
  }
}

TEST(Artifacts, RoundTrips) {
  Grid g;
  g.locations = {{"a", 1.5, -2.0}, {"b", 0.0, 3.25}};
  g.years = {1999, 2009};
  g.values.resize(2, 2);
  g.values << 1.0 / 3.0, 2.0, 0.0, 7.5;
  const fs::path dir = fresh_dir("roundtrip");
  write_grid(dir / "g.csv", g);
  Grid back = read_grid(dir / "g.csv");
  EXPECT_EQ(back.locations, g.locations);
  EXPECT_EQ(back.years, g.years);
  EXPECT_EQ(back.values, g.values);
  EXPECT_TRUE(fs::exists(dir / "g.csv.loc"));

  ChainOutput c;
  c.training = {2, 3, 5};
  c.iterations = 10;
  c.burn_in = 4;
  c.thin = 2;
  c.acceptance.beta = 0.3;
  c.acceptance.beta_by_entry = Eigen::MatrixXd::Constant(2, 3, 0.3);
  c.beta_proposal_var = Eigen::MatrixXd::Constant(2, 3, 0.01);
  for (int i = 0; i < 3; ++i) {
    c.beta_draws.push_back(Eigen::MatrixXd::Random(2, 3));
    ModelParams p;
    p.theta1 = 0.1 / (i + 1.0);
    c.param_draws.push_back(p);
    c.param_trace.push_back(p);
    c.log_posterior_trace.push_back(-100.0 - i / 7.0);
  }
  std::stringstream s;
  write_chain(s, c);
  ChainOutput r = read_chain(s);
  EXPECT_EQ(r.training, c.training);
  EXPECT_EQ(r.param_draws, c.param_draws);
  EXPECT_EQ(r.log_posterior_trace, c.log_posterior_trace);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.beta_draws[i], c.beta_draws[i]);

  Factorization f;
  f.psi = Eigen::MatrixXd::Random(4, 2);
  f.b = Eigen::MatrixXd::Random(2, 3);
  f.offset = Eigen::VectorXd::Random(4);
  f.loss_trace = {3.0, 2.0, 1.0 / 3.0};
  f.iterations = 2;
  std::stringstream fs2;
  write_factorization(fs2, f);
  Factorization fb = read_factorization(fs2);
  EXPECT_EQ(fb.psi, f.psi);
  EXPECT_EQ(fb.offset, f.offset);
  EXPECT_EQ(fb.loss_trace, f.loss_trace);
}

TEST(Cli, PipelineSmokeDeterminismAndGrids) {
  const fs::path dir = fresh_dir("pipeline");
  RunConfig c = small_config(dir);
  cmd_simulate(c);
  cmd_fit(c);
  const fs::path manifest = cmd_forecast(c);
  cmd_baseline(c);
  auto rows = cmd_evaluate(c);
  EXPECT_TRUE(fs::exists(manifest));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].model, "HBA1");

  Grid mean = read_grid(c.output_dir / "HBA1" / "forecast_mean.csv");
  Grid lo = read_grid(c.output_dir / "HBA1" / "forecast_lower.csv");
  Grid hi = read_grid(c.output_dir / "HBA1" / "forecast_upper.csv");
  EXPECT_TRUE((lo.values.array() <= mean.values.array()).all());
  EXPECT_TRUE((mean.values.array() <= hi.values.array()).all());

  std::ifstream draws(c.output_dir / "HBA1" / "2010" / "draws.csv");
  int lines = 0;
  for (std::string l; std::getline(draws, l);) ++lines;
  EXPECT_EQ(lines - 1, c.sampler.iterations - c.sampler.burn_in);

  const auto first = hash_tree(c.output_dir);
  fs::remove_all(c.output_dir / "HBA1");
  fs::remove_all(c.output_dir / "baselines");
  fs::remove_all(c.cache_dir);
  cmd_fit(c);
  cmd_forecast(c);
  cmd_baseline(c);
  cmd_evaluate(c);
  EXPECT_EQ(hash_tree(c.output_dir), first);

  // Cached preparation is reused without changing results.
  cmd_fit(c);
  cmd_forecast(c);
  EXPECT_EQ(hash_tree(c.output_dir), first);
}

TEST(Cli, MethodFlagLabelsRuns) {
  const fs::path dir = fresh_dir("labels");
  RunConfig c = small_config(dir);
  c.sampler.iterations = 40;
  c.sampler.burn_in = 20;
  c.model.hyper.knn_grid = {6, 9};
  c.synthetic.system = LatentSystem::kLorenz63;
  cmd_simulate(c);
  std::ofstream(dir / "run.cfg") << config_text(c);
  const std::string cfg = (dir / "run.cfg").string();
  std::ostringstream out, err;
  for (const char* m : {"eof", "le"}) {
    const char* argv[] = {"hba", "fit", "--config", cfg.c_str(), "--method", m};
    ASSERT_EQ(cli_main(6, argv, out, err), 0) << err.str();
  }
  EXPECT_TRUE(fs::exists(c.output_dir / "HBA1" / "manifest_fit.json"));
  EXPECT_TRUE(fs::exists(c.output_dir / "HBA2" / "manifest_fit.json"));
  const Json m = read_json(c.output_dir / "HBA2" / "manifest_fit.json");
  EXPECT_EQ(m.at("label"), "HBA2");
  EXPECT_EQ(m.at("config").at("method"), "le");
  EXPECT_EQ(m.at("seed"), 3);
  EXPECT_FALSE(m.at("artifacts").empty());
  EXPECT_FALSE(m.contains("timestamp"));
}

TEST(Cli, ErrorsExitNonzeroWithStage) {
  const fs::path dir = fresh_dir("errors");
  RunConfig c = small_config(dir);
  cmd_simulate(c);
  std::ofstream(dir / "run.cfg") << config_text(c);
  const std::string cfg = (dir / "run.cfg").string();
  std::ostringstream out, err;
  const char* holdout[] = {"hba", "fit", "--config", cfg.c_str(), "--holdout", "2030"};
  EXPECT_EQ(cli_main(6, holdout, out, err), 2);
  EXPECT_NE(err.str().find("config"), std::string::npos);
  EXPECT_NE(err.str().find("2030"), std::string::npos);

  err.str("");
  const char* forecast[] = {"hba", "forecast", "--config", cfg.c_str()};
  EXPECT_EQ(cli_main(4, forecast, out, err), 2);
  EXPECT_NE(err.str().find("forecast: "), std::string::npos);
  EXPECT_NE(err.str().find("missing artifact"), std::string::npos);

  const char* nosub[] = {"hba"};
  EXPECT_NE(cli_main(1, nosub, out, err), 0);
}

TEST(Cli, ConstantCountsGiveFlatForecast) {
  const fs::path dir = fresh_dir("constant");
  RunConfig c = small_config(dir);
  cmd_simulate(c);
  CountField counts = load_count_field(c.counts);
  counts.counts.setConstant(12);
  write_count_field(c.counts, counts);
  c.model.n_beta = 1;
  c.model.nmf.offset = false;
  cmd_fit(c);
  cmd_forecast(c);
  cmd_baseline(c);
  auto rows = cmd_evaluate(c);
  const Grid mean = read_grid(c.output_dir / "HBA1" / "forecast_mean.csv");
  // Poisson(12) predictive: the mean over 60 draws sits within a few standard errors.
  EXPECT_LT((mean.values.array() - 12.0).abs().maxCoeff(), 5.0 * std::sqrt(12.0 / 60.0) + 0.5);
  for (const auto& r : rows)
    if (r.model != "HBA1") EXPECT_EQ(r.score.mspe, 0.0) << r.model;
}
