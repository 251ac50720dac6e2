// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
//
//   acceptance [work_dir]
//
// Criterion 5 runs on the Cora files in $IPLANE_CORA_DIR when set, otherwise
// on the planted-partition graph.

#include "infoplane/cli.hpp"

#include "mi_oracle.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <numeric>

namespace {

using namespace infoplane;
using testing::naive_xz;
using testing::naive_zy;
using testing::random_matrix;
using testing::rel_error;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<std::int32_t> cyclic_labels(Eigen::Index n, std::int32_t classes) {
  std::vector<std::int32_t> y(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::int32_t(i % std::size_t(classes));
  return y;
}

// 1. optimized bounds vs two-loop reference
Outcome oracle_equivalence() {
  Clock clock;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    const auto n = Eigen::Index(2 + rng.below(255));
    const auto d = Eigen::Index(1 + rng.below(64));
    const Matrix z = random_matrix(rng, n, d, rng.uniform(0.05, 1.0));
    const auto y = cyclic_labels(n, std::int32_t(1 + rng.below(7)));
    const double s2 = rng.uniform(0.02, 2.0);
    const auto e = estimate_point(z, y, MiConfig{.sigma2 = s2});
    for (double r : {rel_error(e.i_xz_upper, naive_xz(z, s2, 2.0)), rel_error(e.i_xz_lower, naive_xz(z, s2, 8.0)),
                     rel_error(e.i_zy_upper, naive_zy(z, y, s2, 2.0)), rel_error(e.i_zy_lower, naive_zy(z, y, s2, 8.0))})
      worst = std::max(worst, r);
  }
  const double t = clock.seconds();
  return {worst < 1e-10 && t < 10.0, fmt("max rel err %.2e (< 1e-10), %.2f s (< 10 s)", worst, t)};
}

// 2. range, ordering, caps, bandwidth monotonicity, invariances
Outcome bound_properties() {
  Clock clock;
  int failures = 0;
  double worst_invariance = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(2000 + seed);
    const auto n = Eigen::Index(2 + rng.below(80));
    const auto d = Eigen::Index(1 + rng.below(16));
    const Matrix z = random_matrix(rng, n, d, rng.uniform(0.05, 1.0));
    const auto y = cyclic_labels(n, std::int32_t(1 + rng.below(5)));
    const double s2 = rng.uniform(0.02, 1.0);
    const auto e = estimate_point(z, y, MiConfig{.sigma2 = s2});
    const double hy = testing::label_entropy(y);
    bool ok = e.i_xz_lower >= 0.0 && e.i_xz_upper <= std::log(double(n)) + 1e-12 && e.i_xz_lower <= e.i_xz_upper &&
              e.i_zy_upper <= e.i_xz_upper + 1e-12 && e.i_zy_lower <= e.i_xz_lower + 1e-12 &&
              e.i_zy_upper <= hy + 1e-9 && e.i_zy_lower <= hy + 1e-9 && e.i_zy_lower >= -1e-12;

    double prev = std::numeric_limits<double>::infinity();
    for (double f : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      const double v = mi_xz_bound(z, s2 * f, Bound::kUpper);
      ok = ok && v <= prev + 1e-12;
      prev = v;
    }

    Matrix shifted = z;
    shifted.rowwise() += (10.0 * random_matrix(rng, 1, d)).row(0);
    std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    const auto t = estimate_point(shifted, y, MiConfig{.sigma2 = s2});
    const auto p = estimate_point(select_rows(z, perm), select_labels(y, perm), MiConfig{.sigma2 = s2});
    for (const auto* o : {&t, &p})
      for (double diff : {o->i_xz_upper - e.i_xz_upper, o->i_xz_lower - e.i_xz_lower, o->i_zy_upper - e.i_zy_upper,
                          o->i_zy_lower - e.i_zy_lower})
        worst_invariance = std::max(worst_invariance, std::abs(diff));
    failures += !ok;
  }
  const double t = clock.seconds();
  return {failures == 0 && worst_invariance <= 1e-12 && t < 30.0,
          fmt("%d/100 seeds violate range/order/cap/bandwidth, invariance diff %.1e (<= 1e-12), %.2f s (< 30 s)",
              failures, worst_invariance, t)};
}

// 3. hand-evaluated values
Outcome hand_values() {
  const Matrix pair{{0.0}, {1.0}};
  const Matrix quad{{0.0}, {0.0}, {10.0}, {10.0}};
  const double l1 = kernel_logsums(pair, 0.5, 2.0)(0);
  const double l1_expected = std::log((1.0 + std::exp(-1.0)) / 2.0);
  const double xz = mi_xz_bound(quad, 0.5, Bound::kUpper);
  const double zy = mi_zy_bound(quad, {0, 0, 1, 1}, 0.5, Bound::kUpper);

  Rng rng(64);
  const Matrix z = random_matrix(rng, 64, 10, 0.3);
  const auto y = cyclic_labels(64, 4);
  const auto e = estimate_point(z, y, MiConfig{.sigma2 = 0.1});
  const double oracle = std::max({rel_error(e.i_xz_upper, naive_xz(z, 0.1, 2.0)),
                                  rel_error(e.i_zy_upper, naive_zy(z, y, 0.1, 2.0)),
                                  rel_error(e.i_xz_lower, naive_xz(z, 0.1, 8.0)),
                                  rel_error(e.i_zy_lower, naive_zy(z, y, 0.1, 8.0))});
  const double dl1 = std::abs(l1 - l1_expected);
  const double dxz = std::abs(xz - std::numbers::ln2);
  const double dzy = std::abs(zy - std::numbers::ln2);
  return {dl1 < 1e-6 && dxz < 1e-6 && dzy < 1e-6 && oracle < 1e-10,
          fmt("L1 %.6f vs %.6f, I(X,Z) %.6f, I(Z,Y) %.6f vs ln2 (all within 1e-6), 64-row oracle rel %.1e (< 1e-10)",
              l1, l1_expected, xz, zy, oracle)};
}

// 4. analytic vs finite-difference gradients
Outcome gradient_checks() {
  Clock clock;
  double worst = 0.0;
  int models = 0;
  for (auto kind : {LayerKind::kDense, LayerKind::kGcn, LayerKind::kGat})
    for (auto act : {Activation::kRelu, Activation::kTanh, Activation::kSigmoid, Activation::kIdentity})
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto ds = testing::random_graph_dataset(300 + seed, 12, 5, 3);
        const ModelSpec spec{.layer_kind = kind, .hidden_dims = {6, 5, 4}, .activation = act, .output_dim = 3,
                             .seed = seed};
        worst = std::max(worst, gradient_check(init_model(spec, ds.feature_dim()), ds).max_rel_error());
        ++models;
      }
  const double t = clock.seconds();
  return {worst < 1e-4 && t < 60.0, fmt("%d models, max rel err %.2e (< 1e-4), %.2f s (< 60 s)", models, worst, t)};
}

struct ArchRun {
  TrainRecord record;
  std::vector<MiEstimate> plane;
  double seconds = 0.0;
};

struct SeedRuns {
  ArchRun mlp, gcn, gat;
};

const char* kArchs[] = {"mlp", "gcn", "gat"};

cli::DatasetOptions figure_dataset(std::uint64_t seed) {
  cli::DatasetOptions d;
  if (const char* cora = std::getenv("IPLANE_CORA_DIR"); cora && *cora) {
    d.cora_dir = cora;
  } else {
    d.synthetic = "50x4";
    d.p_intra = 0.1;
    d.p_inter = 0.005;
    d.noise = 1.0;
    d.data_seed = seed;
  }
  d.split_seed = seed;
  return d;
}

std::vector<SeedRuns> figure_runs(double& seconds) {
  Clock clock;
  std::vector<SeedRuns> runs(10);
  MiConfig mi;
  mi.sigma2 = 0.1;
  mi.max_rows = 1000;
  for (std::uint64_t seed = 0; seed < runs.size(); ++seed) {
    const auto ds = cli::build_dataset(figure_dataset(seed));
    cli::ModelOptions mo;
    mo.epochs = 100;
    mo.seed = seed;
    ArchRun* slots[] = {&runs[seed].mlp, &runs[seed].gcn, &runs[seed].gat};
    for (int a = 0; a < 3; ++a) {
      Clock arch_clock;
      auto model = init_model(cli::build_spec(mo, kArchs[a], ds.num_classes), ds.feature_dim());
      TraceRecorder rec(make_trace_header(model, ds));
      slots[a]->record = train_full_batch(model, ds, cli::build_train_config(mo), &rec);
      slots[a]->plane = plane_from_trace(rec.finish(), mi, default_thread_count());
      slots[a]->seconds = arch_clock.seconds();
    }
  }
  seconds = clock.seconds();
  return runs;
}

// 5. MLP fits the training set; GCN generalizes better
Outcome accuracy_gap(const std::vector<SeedRuns>& runs, double seconds) {
  int fitted = 0, gaps = 0;
  double mean_gap = 0.0;
  for (const auto& r : runs) {
    double best = 0.0;
    for (const auto& m : r.mlp.record.epochs)
      if (m.epoch <= 100) best = std::max(best, m.train_acc);
    fitted += best >= 0.95;
    const double gap = r.gcn.record.epochs.back().val_acc - r.mlp.record.epochs.back().val_acc;
    gaps += gap >= 0.05;
    mean_gap += gap / double(runs.size());
  }
  const int n = int(runs.size());
  return {fitted == n && gaps >= 8 && seconds < 600.0,
          fmt("%s: MLP train acc >= 0.95 by epoch 100 in %d/%d seeds, GCN-MLP val gap >= 0.05 in %d/%d (need 8), "
              "mean gap %.3f, %.1f s (< 600 s)",
              std::getenv("IPLANE_CORA_DIR") ? "cora" : "planted partition", fitted, n, gaps, n, mean_gap, seconds)};
}

// 6. MLP layers follow the data processing inequality
Outcome mlp_dpi(const SeedRuns& run) {
  const auto xz = dpi_report(run.mlp.plane, PlaneAxis::kXZ, Bound::kUpper, 0.02);
  const auto zy = dpi_report(run.mlp.plane, PlaneAxis::kZY, Bound::kUpper, 0.02);
  std::size_t both = 0;
  for (std::size_t k = 0; k < xz.epochs.size(); ++k) both += xz.epochs[k].verdict.holds && zy.epochs[k].verdict.holds;
  const double frac = double(both) / double(xz.epochs.size());
  const double t = run.mlp.seconds;
  return {frac >= 0.9 && t < 300.0,
          fmt("seed 0, sigma2 0.1, max_rows 1000, tol 0.02: both axes hold in %.1f%% of epochs (>= 90%%), "
              "I(X;Z) %.1f%%, I(Z;Y) %.1f%%, train+estimate %.1f s (< 300 s)",
              100 * frac, 100 * xz.fraction_holding, 100 * zy.fraction_holding, t)};
}

bool zy_rises(const std::vector<MiEstimate>& plane, double& min_delta) {
  const auto last = plane.back().epoch;
  std::map<std::uint16_t, double> first, final;
  for (const auto& m : plane) {
    if (m.epoch == 1) first[m.layer_index] = m.i_zy_upper;
    if (m.epoch == last) final[m.layer_index] = m.i_zy_upper;
  }
  bool ok = first.size() == 3 && final.size() == 3;
  for (const auto& [layer, v] : first) {
    const double delta = final[layer] - v;
    min_delta = std::min(min_delta, delta);
    ok = ok && delta > 0.0;
  }
  return ok;
}

// 7. I(Z;Y) grows between the first and last epoch in every hidden layer
Outcome fitting_phase(const std::vector<SeedRuns>& runs) {
  double min_delta = std::numeric_limits<double>::infinity();
  bool designated = true;
  for (const auto* a : {&runs[0].mlp, &runs[0].gcn, &runs[0].gat}) designated = zy_rises(a->plane, min_delta) && designated;
  int seeds_ok = 0;
  for (const auto& r : runs) {
    double ignored = std::numeric_limits<double>::infinity();
    seeds_ok += zy_rises(r.mlp.plane, ignored) && zy_rises(r.gcn.plane, ignored) && zy_rises(r.gat.plane, ignored);
  }
  return {designated, fmt("seed 0, all archs and layers: smallest rise %.2e (> 0); all layers rise in %d/%d seeds",
                          min_delta, seeds_ok, int(runs.size()))};
}

std::string error_of(const std::filesystem::path& p) {
  try {
    load_trace(p);
  } catch (const TraceError& e) {
    return e.what();
  }
  return "";
}

// 8. trace serialization and corruption handling
Outcome trace_round_trip(const std::filesystem::path& dir) {
  Clock clock;
  int mismatches = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(800 + seed);
    const auto n = std::uint32_t(2 + rng.below(40));
    const auto classes = std::uint32_t(1 + rng.below(5));
    TraceHeader h;
    h.dataset_name = "random";
    h.num_nodes = n;
    h.num_classes = classes;
    h.activation_name = "tanh";
    h.seed = seed;
    for (std::uint32_t l = 0, layers = 1 + std::uint32_t(rng.below(4)); l < layers; ++l) {
      h.layer_names.push_back("layer" + std::to_string(l + 1));
      h.layer_dims.push_back(std::uint32_t(1 + rng.below(20)));
    }
    for (std::uint32_t i = 0; i < n; ++i) h.labels.push_back(std::int32_t(rng.below(classes)));
    TraceRecorder rec(h);
    for (std::uint32_t e = 1, epochs = 1 + std::uint32_t(rng.below(6)); e <= epochs; ++e)
      for (std::uint16_t l = 0; l < h.layer_dims.size(); ++l)
        rec.append_snapshot(e, l, random_matrix(rng, n, h.layer_dims[l], 5.0));
    const auto trace = rec.finish();
    write_trace(dir / "a.bin", trace);
    const auto loaded = load_trace(dir / "a.bin");
    write_trace(dir / "b.bin", loaded);
    bool same = testing::read_file(dir / "a.bin") == testing::read_file(dir / "b.bin") &&
                loaded.chunks.size() == trace.chunks.size() && loaded.header.labels == trace.header.labels;
    for (std::size_t k = 0; same && k < trace.chunks.size(); ++k) same = loaded.chunks[k].values == trace.chunks[k].values;
    mismatches += !same;
  }

  const auto good = testing::read_file(dir / "a.bin");
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  testing::write_file(dir / "magic.bin", bad_magic);
  testing::write_file(dir / "trunc.bin", good.substr(0, good.size() - 3));
  const bool magic_ok = error_of(dir / "magic.bin").find("unsupported magic/version") != std::string::npos;
  const bool trunc_ok = error_of(dir / "trunc.bin").find("truncated chunk") != std::string::npos;

  // Drop the last chunk of a two-layer trace.
  TraceHeader h;
  h.dataset_name = "partial";
  h.num_nodes = 3;
  h.num_classes = 2;
  h.activation_name = "relu";
  h.layer_names = {"a", "b"};
  h.layer_dims = {2, 2};
  h.labels = {0, 1, 0};
  TraceRecorder rec(h);
  for (std::uint32_t e = 1; e <= 2; ++e)
    for (std::uint16_t l = 0; l < 2; ++l) rec.append_snapshot(e, l, Matrix::Ones(3, 2));
  write_trace(dir / "p.bin", rec.finish());
  const auto full = testing::read_file(dir / "p.bin");
  testing::write_file(dir / "partial.bin", full.substr(0, full.size() - (kChunkFixedBytes + 4 * 6)));
  const bool partial_ok = error_of(dir / "partial.bin") == "partial epoch 2";

  const double t = clock.seconds();
  return {mismatches == 0 && magic_ok && trunc_ok && partial_ok && t < 5.0,
          fmt("20 random traces, %d byte mismatches; bad magic %s, truncation %s, partial epoch %s; %.2f s (< 5 s)",
              mismatches, magic_ok ? "ok" : "wrong error", trunc_ok ? "ok" : "wrong error",
              partial_ok ? "ok" : "wrong error", t)};
}

// 9. compare is reproducible byte for byte
Outcome compare_determinism(const std::filesystem::path& dir) {
  Clock clock;
  auto run = [&](const std::string& out_dir) {
    std::filesystem::remove_all(out_dir);
    const std::vector<std::string> args = {"infoplane", "compare", "--synthetic", "50x4", "--epochs", "30",
                                           "--parallel", "--out-dir", out_dir};
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream sink;
    return cli::run_cli(int(argv.size()), argv.data(), sink, sink);
  };
  const auto a = (dir / "run1").string();
  const auto b = (dir / "run2").string();
  if (run(a) != 0 || run(b) != 0) return {false, "compare exited nonzero"};
  int files = 0, differing = 0;
  for (const auto& entry : std::filesystem::directory_iterator(a)) {
    ++files;
    const auto other = std::filesystem::path(b) / entry.path().filename();
    differing += testing::read_file(entry.path()) != testing::read_file(other);
  }
  const double t = clock.seconds();
  return {files == 12 && differing == 0,
          fmt("%d output files (traces, CSVs, SVGs), %d differ; %.1f s", files, differing, t)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path dir =
      argc > 1 ? std::filesystem::path(argv[1]) : std::filesystem::temp_directory_path() / "infoplane_acceptance";
  std::filesystem::create_directories(dir);

  int failed = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("%d %s %s: %s\n", id, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };

  report(1, "oracle equivalence", oracle_equivalence());
  report(2, "bound properties", bound_properties());
  report(3, "hand values", hand_values());
  report(4, "gradient checks", gradient_checks());
  double seconds = 0.0;
  const auto runs = figure_runs(seconds);
  report(5, "accuracy gap", accuracy_gap(runs, seconds));
  report(6, "mlp dpi", mlp_dpi(runs[0]));
  report(7, "fitting phase", fitting_phase(runs));
  report(8, "trace round trip", trace_round_trip(dir));
  report(9, "compare determinism", compare_determinism(dir));

  std::printf("%d/9 criteria passed\n", 9 - failed);
  return failed == 0 ? 0 : 1;
}
