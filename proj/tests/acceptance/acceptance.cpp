// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.
//
//   qospred_acceptance [--workdir DIR] [N ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <qospred/qospred.hpp>

namespace fs = std::filesystem;
using namespace qospred;

namespace {

// Tolerances and budgets.
constexpr std::size_t kSplitTolerance = 2;
constexpr double kLearnabilityMaeBound = 0.04;
constexpr double kTauLo = 1.95, kTauHi = 2.05;
constexpr double kClosedFormRelErr = 1e-6;
constexpr double kCoverageTolerance = 0.02;
constexpr double kGradRelErr = 1e-4;
constexpr double kMcAggregateTol = 1e-12;
constexpr double kClipSlack = 1e-6;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "ok: " : "FAILED: ") + what);
  }
};

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------- 1: splits

struct TableRow {
  const char* name;
  Metric metric;
  double density;
  std::size_t train, test, validation;
};

const TableRow kSplitTable[] = {
    {"RT:D1.1", Metric::rt, 0.05, 95877, 1437361, 383310},  {"RT:D1.2", Metric::rt, 0.10, 191755, 1341483, 383310},
    {"RT:D1.3", Metric::rt, 0.15, 287632, 1245606, 383310}, {"RT:D1.4", Metric::rt, 0.20, 383510, 1149728, 383310},
    {"TP:D2.1", Metric::tp, 0.05, 82586, 1218788, 330343},  {"TP:D2.2", Metric::tp, 0.10, 165171, 1136203, 330343},
    {"TP:D2.3", Metric::tp, 0.15, 247757, 1053617, 330343}, {"TP:D2.4", Metric::tp, 0.20, 330343, 971031, 330343},
};

// Observed cells, taken as the row sums of the table.
std::size_t observed_total(Metric m) { return m == Metric::rt ? 1916548 : 1631717; }

std::vector<QoSRecord> synthetic_records(Metric m, std::size_t n) {
  constexpr int kServices = 5825;
  std::vector<QoSRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({static_cast<int>(i / kServices), static_cast<int>(i % kServices), m, 0.001 * static_cast<double>(i % 997)});
  return out;
}

Outcome criterion_splits(const fs::path&) {
  Outcome o;
  for (const auto& row : kSplitTable) {
    RunConfig c;
    c.metric = row.metric;
    c.density = row.density;
    auto prepared = prepare_splits(synthetic_records(row.metric, observed_total(row.metric)), c);
    const auto& s = prepared.split;
    auto near = [](std::size_t got, std::size_t want) {
      return (got > want ? got - want : want - got) <= kSplitTolerance;
    };
    const bool ok = near(s.train.size(), row.train) && near(s.test.size(), row.test) &&
                    near(s.validation.size(), row.validation);
    o.check(ok, std::string(row.name) + " train/test/valid " + std::to_string(s.train.size()) + "/" +
                    std::to_string(s.test.size()) + "/" + std::to_string(s.validation.size()) + " vs table " +
                    std::to_string(row.train) + "/" + std::to_string(row.test) + "/" + std::to_string(row.validation));
  }
  return o;
}

// ---------------------------------------------------------- 2: learnability

constexpr std::uint64_t kSeed = 42;

struct LearnRun {
  double heldout_mae = 0.0;
  double final_train_loss = 0.0;
};

// 512 synthetic examples, 410 train / 102 held-out, tiny 2-layer backbone.
LearnRun run_learnability(const fs::path& dir, HeadKind head) {
  fs::create_directories(dir);
  auto corpus = make_synthetic_corpus(512, 0.02, kSeed);
  auto examples = build_examples(corpus.records, corpus.users, corpus.services);
  Rng rng(derive_seed(kSeed, 0x5b1));
  portable_shuffle(examples, rng);
  std::vector<FeatureExample> train_set(examples.begin(), examples.begin() + 410);
  std::vector<FeatureExample> heldout(examples.begin() + 410, examples.end());

  RunConfig c;
  c.head = head;
  c.encoder.num_layers = 2;
  c.encoder.hidden_dim = 32;
  c.encoder.num_heads = 4;
  c.encoder.block_size = 128;
  c.encoder.dropout_p = 0.1;
  c.fusion.top_k = 2;
  c.fusion.dropout_p = 0.1;
  c.train.epochs = 120;
  c.train.batch_size = 16;
  c.train.learning_rate = 1e-3;
  c.train.linear_decay = true;
  c.mc.passes = 20;
  c.seed = kSeed;
  c.propagate_seed();

  auto model = make_model(c, train_set);
  auto result = train(train_set, heldout, model, c.train, c.schedule, {});
  write_train_log(dir / "train_log.csv", result.epochs);
  write_step_log(dir / "train_steps.csv", result.steps);

  auto preds = predict_examples(model, heldout, c.mc, CalibrationState{});
  write_predictions_jsonl(dir / "predictions_heldout.jsonl", preds);
  ReportOptions options;
  options.use_calibrated = false;
  auto report = evaluate_predictions(preds, options);
  report.metric = "rt";
  report.head = std::string(to_string(head));
  export_report(report, dir / "report");

  LearnRun out;
  out.heldout_mae = report.mae;
  out.final_train_loss = result.epochs.back().train_total;
  return out;
}

Outcome criterion_learnability(const fs::path& work) {
  Outcome o;
  auto run = run_learnability(work / "c2", HeadKind::fusion);
  o.check(run.heldout_mae < kLearnabilityMaeBound,
          "held-out MC MAE " + fmt(run.heldout_mae) + " < " + fmt(kLearnabilityMaeBound) + " (noise sd 0.02)");
  return o;
}

// ------------------------------------------------------------ 3: calibration

struct GaussianSet {
  std::vector<MeanVar> preds;
  std::vector<double> y;
};

// Targets drawn from N(mu, sigma^2); reported variance is (scale * sigma)^2.
GaussianSet gaussian_set(std::size_t n, double reported_scale, std::uint64_t stream) {
  Rng rng(derive_seed(kSeed, stream));
  GaussianSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = 2.0 * standard_normal(rng);
    const double sigma = 0.1 + 1.9 * uniform01(rng);
    s.y.push_back(mu + sigma * standard_normal(rng));
    s.preds.push_back({mu, reported_scale * reported_scale * sigma * sigma});
  }
  return s;
}

Outcome criterion_calibration(const fs::path& work) {
  Outcome o;
  auto s = gaussian_set(10000, 0.5, 3);
  auto c = calibrate_temperature(s.preds, s.y, "synthetic");
  fs::create_directories(work / "c3");
  save_calibration(work / "c3" / "calibration.json", c);
  o.check(c.tau() >= kTauLo && c.tau() <= kTauHi, "tau " + fmt(c.tau()) + " in [" + fmt(kTauLo) + ", " + fmt(kTauHi) + "]");
  double msr = 0.0;
  for (std::size_t i = 0; i < s.y.size(); ++i) msr += (s.y[i] - s.preds[i].mu) * (s.y[i] - s.preds[i].mu) / s.preds[i].var;
  msr /= static_cast<double>(s.y.size());
  const double err = std::abs(c.tau() * c.tau() - msr) / msr;
  o.check(err < kClosedFormRelErr, "tau^2 vs mean normalized squared residual rel err " + fmt(err, 3));
  return o;
}

// --------------------------------------------------------------- 4: coverage

std::vector<PredictionRecord> as_records(const GaussianSet& s, double var_factor) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < s.y.size(); ++i) {
    const double v = var_factor * s.preds[i].var;
    out.push_back({static_cast<int>(i), 0, s.preds[i].mu, v, v, s.y[i]});
  }
  return out;
}

Outcome criterion_coverage(const fs::path& work) {
  Outcome o;
  auto s = gaussian_set(10000, 1.0, 4);
  auto calibrated = evaluate_predictions(as_records(s, 1.0));
  auto doubled = evaluate_predictions(as_records(s, 2.0));
  export_report(calibrated, work / "c4" / "calibrated");
  export_report(doubled, work / "c4" / "doubled");

  double worst = 0.0, worst_alpha = 0.0;
  for (const auto& p : calibrated.coverage)
    if (std::abs(p.empirical_coverage - p.alpha) >= worst) {
      worst = std::abs(p.empirical_coverage - p.alpha);
      worst_alpha = p.alpha;
    }
  o.check(worst < kCoverageTolerance, "calibrated: max |coverage - alpha| " + fmt(worst, 4) + " at alpha " +
                                          fmt(worst_alpha, 3) + " over " + std::to_string(calibrated.coverage.size()) +
                                          " levels");
  int below = 0, checked = 0;
  for (const auto& p : doubled.coverage)
    if (p.alpha < 0.9) {
      ++checked;
      if (!(p.empirical_coverage > p.alpha)) ++below;
    }
  o.check(checked > 0 && below == 0,
          "doubled variances: coverage > alpha at " + std::to_string(checked - below) + "/" + std::to_string(checked) +
              " levels below 0.9");
  return o;
}

// -------------------------------------------------------------- 5: gradients

std::vector<Matrix> random_states(int layers, int rows, int d, Rng& rng) {
  std::vector<Matrix> out;
  for (int l = 0; l < layers; ++l) {
    Matrix m(rows, d);
    fill_normal(m, rng, 1.0);
    out.push_back(m);
  }
  return out;
}

Outcome criterion_gradients(const fs::path&) {
  Outcome o;
  Rng rng(derive_seed(kSeed, 5));
  const double h = 1e-6;

  // Gaussian NLL w.r.t. mu and log variance (no MAE term).
  double worst_nll = 0.0;
  auto nll = [](double y, double mu, double lv) { return 0.5 * (y - mu) * (y - mu) / std::exp(lv) + 0.5 * lv; };
  for (int i = 0; i < 500; ++i) {
    const double y = 4 * uniform01(rng) - 2, mu = 4 * uniform01(rng) - 2, lv = 4 * uniform01(rng) - 2;
    auto g = joint_loss_grad(y, mu, lv, 0.0);
    worst_nll = std::max(worst_nll, rel_err(g.d_mu, (nll(y, mu + h, lv) - nll(y, mu - h, lv)) / (2 * h)));
    worst_nll = std::max(worst_nll, rel_err(g.d_log_var, (nll(y, mu, lv + h) - nll(y, mu, lv - h)) / (2 * h)));
  }
  o.check(worst_nll < kGradRelErr, "NLL d/dmu, d/dlog var: worst rel err " + fmt(worst_nll, 3));

  // Temperature NLL w.r.t. log tau.
  double worst_tau = 0.0;
  auto s = gaussian_set(300, 0.8, 55);
  for (double lt : {-1.0, -0.3, 0.0, 0.4, 1.1}) {
    const double numeric = (temperature_nll(s.preds, s.y, lt + h).first - temperature_nll(s.preds, s.y, lt - h).first) / (2 * h);
    worst_tau = std::max(worst_tau, rel_err(numeric, temperature_nll(s.preds, s.y, lt).second));
  }
  o.check(worst_tau < kGradRelErr, "NLL d/dlog tau: worst rel err " + fmt(worst_tau, 3));

  // NLL through MLP, pooling and layer fusion, for both heads, every
  // parameter and every input state entry.
  for (HeadKind kind : {HeadKind::fusion, HeadKind::sft}) {
    double worst = 0.0;
    std::size_t entries = 0;
    for (int trial = 0; trial < 3; ++trial) {
      FusionConfig cfg;
      cfg.top_k = 2;
      cfg.dropout_p = 0.2;
      RegressionHead head(kind, cfg, 3, 6, 100 + static_cast<std::uint64_t>(trial));
      fill_normal(head.attention_query().value, rng, 1.0);
      fill_normal(head.mlp().output().weight.value, rng, 0.5);
      auto states = random_states(3, 5, 6, rng);
      std::vector<int> mask{1, 1, 1, 1, 0};
      const double y = uniform01(rng);
      const std::uint64_t stream = rng();

      auto loss = [&] {
        Rng r(stream);
        auto p = head.forward(states, mask, EncodeMode::train, r);
        return nll(y, p.mu, p.log_var);
      };
      for (auto& p : head.parameters()) p.param->zero_grad();
      Rng r(stream);
      RegressionHead::Cache cache;
      auto p = head.forward(states, mask, EncodeMode::train, r, &cache);
      auto g = joint_loss_grad(y, p.mu, p.log_var, 0.0);
      auto d_states = head.backward(cache, states, g.d_mu, g.d_log_var);

      auto check = [&](double& x, double analytic) {
        const double old = x;
        x = old + h;
        const double up = loss();
        x = old - h;
        const double down = loss();
        x = old;
        worst = std::max(worst, rel_err((up - down) / (2 * h), analytic));
        ++entries;
      };
      for (auto& prm : head.parameters())
        for (Eigen::Index i = 0; i < prm.param->value.size(); ++i) check(prm.param->value.data()[i], prm.param->grad.data()[i]);
      for (std::size_t l = 0; l < states.size(); ++l)
        for (Eigen::Index i = 0; i < states[l].size(); ++i)
          check(states[l].data()[i], d_states[l].size() ? d_states[l].data()[i] : 0.0);
    }
    o.check(worst < kGradRelErr, std::string(to_string(kind)) + " head stack: worst rel err " + fmt(worst, 3) +
                                     " over " + std::to_string(entries) + " entries");
  }
  return o;
}

// ----------------------------------------------------------- 6: MC identities

QosModel tiny_model(double dropout) {
  std::vector<std::string> texts{"User 3 from Germany ||| Service 7 provided by provider3 from Japan"};
  EncoderConfig e;
  e.num_layers = 2;
  e.hidden_dim = 16;
  e.num_heads = 2;
  e.block_size = 32;
  e.dropout_p = dropout;
  FusionConfig f;
  f.top_k = 2;
  f.dropout_p = dropout;
  return QosModel(Tokenizer::build(texts), e, HeadKind::fusion, f);
}

Outcome criterion_mc(const fs::path&) {
  Outcome o;
  const std::string text = "User 3 from Germany ||| Service 7 provided by provider3";

  auto still = tiny_model(0.0);
  auto seq = still.sequence(text);
  MCConfig mc;
  auto p0 = mc_predict(still, seq, mc, CalibrationState{});
  auto det = still.predict(seq, EncodeMode::eval_deterministic, 0);
  o.check(p0.sample_std() == 0.0, "p=0: stdev of sample means " + fmt(p0.sample_std()));
  o.check(p0.mu == det.mu && p0.var == det.var(), "p=0: aggregate equals deterministic pass exactly");

  auto noisy = tiny_model(0.2);
  auto seq2 = noisy.sequence(text);
  mc.passes = 1;
  auto p1 = mc_predict(noisy, seq2, mc, CalibrationState{});
  auto one = noisy.predict(seq2, EncodeMode::eval_mc, derive_seed(mc.seed, hash_ids(seq2.ids), 0));
  o.check(p1.mu == one.mu && p1.var == one.var(), "T=1 equals a single eval_mc pass");

  mc.passes = 20;
  auto pt = mc_predict(noisy, seq2, mc, CalibrationState{});
  double mu = 0.0, var = 0.0;
  for (int t = 0; t < mc.passes; ++t) {
    auto s = noisy.predict(seq2, EncodeMode::eval_mc, derive_seed(mc.seed, hash_ids(seq2.ids), static_cast<std::uint64_t>(t)));
    mu += s.mu;
    var += s.var();
  }
  mu /= mc.passes;
  var /= mc.passes;
  const double diff = std::max(std::abs(pt.mu - mu), std::abs(pt.var - var));
  o.check(diff < kMcAggregateTol && pt.sample_std() > 0.0, "T=20 aggregate equals arithmetic means, max diff " + fmt(diff, 3));
  return o;
}

// ---------------------------------------------------- 7: structural invariants

Outcome criterion_structure(const fs::path&) {
  Outcome o;
  Rng rng(derive_seed(kSeed, 7));

  auto states = random_states(4, 6, 8, rng);
  o.check(fuse_layers(states, 1) == states.back(), "fuse_layers(K=1) equals the last layer");

  double worst_perm = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 15);
    Matrix x(n, 8);
    fill_normal(x, rng, 1.0);
    RowVector q(8);
    for (Eigen::Index j = 0; j < 8; ++j) q(j) = standard_normal(rng);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    portable_shuffle(perm, rng);
    Matrix y(n, 8);
    for (int i = 0; i < n; ++i) y.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    std::vector<int> mask(static_cast<std::size_t>(n), 1);
    worst_perm = std::max(worst_perm, (multi_pool(x, mask, {}, q) - multi_pool(y, mask, {}, q)).cwiseAbs().maxCoeff());
  }
  o.check(worst_perm < 1e-12, "pooling permutation invariance over 1000 sets, max diff " + fmt(worst_perm, 3));

  int rmse_violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 64;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = 10 * standard_normal(rng);
      b[i] = 10 * standard_normal(rng);
    }
    if (rmse(a, b) < mae(a, b)) ++rmse_violations;
  }
  o.check(rmse_violations == 0, "rmse >= mae on 1000 random vectors");

  // 20-epoch run on a 4-layer model with a slow unfreezing schedule.
  auto corpus = make_synthetic_corpus(48, 0.02, kSeed);
  auto data = build_examples(corpus.records, corpus.users, corpus.services);
  RunConfig c;
  c.encoder.num_layers = 4;
  c.encoder.hidden_dim = 16;
  c.encoder.num_heads = 2;
  c.encoder.block_size = 64;
  c.fusion.top_k = 2;
  c.train.epochs = 20;
  c.train.batch_size = 8;
  c.train.learning_rate = 1e-2;
  c.schedule = {3, 1};
  auto model = make_model(c, data);
  std::vector<std::set<std::string>> trainable;
  TrainHooks hooks;
  hooks.before_epoch = [&](int, const TrainableSet& t, QosModel& m) {
    std::set<std::string> groups;
    for (const auto& p : m.parameters())
      if (t.contains_group(p.group)) groups.insert(p.group);
    trainable.push_back(groups);
  };
  auto result = train(data, {}, model, c.train, c.schedule, hooks);
  bool monotone = trainable.size() == 20;
  for (std::size_t e = 1; e < trainable.size(); ++e)
    monotone = monotone && std::includes(trainable[e].begin(), trainable[e].end(), trainable[e - 1].begin(), trainable[e - 1].end());
  o.check(monotone && trainable.front().size() < trainable.back().size(),
          "trainable set monotone over 20 epochs (" + std::to_string(trainable.front().size()) + " -> " +
              std::to_string(trainable.back().size()) + " groups)");

  double max_clipped = 0.0, max_raw = 0.0;
  for (const auto& s : result.steps) {
    max_clipped = std::max(max_clipped, s.clipped_norm);
    max_raw = std::max(max_raw, s.grad_norm);
  }
  o.check(max_clipped <= 1.0 + kClipSlack, "clipped norm <= 1 on all " + std::to_string(result.steps.size()) +
                                               " steps (max " + fmt(max_clipped, 8) + ", raw max " + fmt(max_raw) + ")");
  return o;
}

// ----------------------------------------------------------- 8: SFT contrast

double final_loss_from_log(const fs::path& log) {
  std::ifstream in(log);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  std::istringstream row(last);
  std::string epoch, total;
  std::getline(row, epoch, ',');
  std::getline(row, total, ',');
  return std::stod(total);
}

Outcome criterion_sft(const fs::path& work) {
  Outcome o;
  if (!fs::exists(work / "c2" / "train_log.csv")) run_learnability(work / "c2", HeadKind::fusion);
  auto sft = run_learnability(work / "c8_sft", HeadKind::sft);
  const double fusion_loss = final_loss_from_log(work / "c2" / "train_log.csv");
  o.check(fusion_loss < sft.final_train_loss, "final training loss fusion " + fmt(fusion_loss) + " < sft " +
                                                  fmt(sft.final_train_loss) + " (held-out MAE sft " +
                                                  fmt(sft.heldout_mae) + ")");
  o.notes.push_back("logs: " + (work / "c2" / "train_log.csv").string() + ", " + (work / "c8_sft" / "train_log.csv").string());
  return o;
}

// ------------------------------------------------------------ 9: determinism

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

Outcome criterion_determinism(const fs::path& work) {
  Outcome o;
  const auto first = work / "c9_first";
  const auto second = work / "c9_second";
  for (const auto& dir : {first, second}) {
    fs::remove_all(dir);
    if (dir == first && fs::exists(work / "c2" / "train_log.csv")) {
      fs::create_directories(dir);
      fs::copy(work / "c2", dir / "c2", fs::copy_options::recursive);
    } else {
      run_learnability(dir / "c2", HeadKind::fusion);
    }
    criterion_calibration(dir);
    criterion_coverage(dir);
  }
  auto a = snapshot(first), b = snapshot(second);
  std::size_t same = 0;
  for (const auto& [name, bytes] : a) {
    auto it = b.find(name);
    if (it != b.end() && it->second == bytes) {
      ++same;
    } else {
      o.check(false, name + " differs between runs");
    }
  }
  o.check(a.size() == b.size() && same == a.size() && !a.empty(),
          std::to_string(same) + "/" + std::to_string(a.size()) + " files byte-identical across reruns of criteria 2-4");
  return o;
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome(const fs::path&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "qospred_acceptance";
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else {
      try {
        selected.insert(std::stoi(a));
      } catch (const std::exception&) {
        std::cerr << "usage: qospred_acceptance [--workdir DIR] [criterion ...]\n";
        return 2;
      }
    }
  }
  fs::create_directories(work);

  const std::vector<Criterion> criteria = {
      {1, "split accounting", criterion_splits},
      {2, "synthetic learnability", criterion_learnability},
      {3, "calibration oracle", criterion_calibration},
      {4, "coverage", criterion_coverage},
      {5, "gradient suite", criterion_gradients},
      {6, "MC dropout identities", criterion_mc},
      {7, "structural invariants", criterion_structure},
      {8, "SFT contrast", criterion_sft},
      {9, "determinism", criterion_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(work);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& n : o.notes) std::cout << "    " << n << '\n';
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " " << c.title << " (" << fmt(secs, 3) << " s)"
              << std::endl;
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
