#pragma once

// Command-line front end: datasets -> training -> traces -> planes -> plots
// and reports. run_cli() is the whole program; tools/infoplane.cpp only
// forwards argv.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage error, 3 DPI violated.

#include "infoplane/datasets.hpp"
#include "infoplane/dpi.hpp"
#include "infoplane/mi.hpp"
#include "infoplane/models.hpp"
#include "infoplane/plot.hpp"
#include "infoplane/trace.hpp"
#include "infoplane/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace infoplane::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDpiViolated = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetOptions {
  std::string cora_dir;
  std::string csv_dir;
  std::string synthetic;  // "<n_per_class>x<classes>"
  std::int64_t dim = 16;
  double p_intra = 0.1;
  double p_inter = 0.005;
  double noise = 1.0;
  std::uint64_t data_seed = 0;
  std::optional<std::int64_t> n_train, n_val, n_test;
  std::uint64_t split_seed = 0;
  bool symmetrize = false;
  bool row_normalize = false;
};

struct ModelOptions {
  std::string arch = "mlp";
  std::string activation = "relu";
  std::string hidden = "300,200,100";
  std::int64_t epochs = 100;
  std::string optimizer = "adam";
  double lr = 0.01;
  std::uint64_t seed = 0;
  std::int64_t snapshot_every = 1;
  std::string spec_in;
};

struct EstimateOptions {
  double sigma2 = 0.1;
  std::int64_t max_rows = 2000;
  std::uint64_t seed = 0;
  bool no_stratify = false;
  bool bits = false;
  bool lower_class_c2 = false;
  unsigned threads = 0;
};

inline void add_dataset_options(CLI::App* cmd, DatasetOptions& o) {
  cmd->add_option("--dataset", o.cora_dir, "Directory holding Cora-format *.content and *.cites files")
      ->group("Dataset");
  cmd->add_option("--csv", o.csv_dir, "Directory holding features.csv, labels.csv, edges.csv")->group("Dataset");
  cmd->add_option("--synthetic", o.synthetic, "Planted-partition graph, <nodes per class>x<classes>, e.g. 50x4")
      ->group("Dataset");
  cmd->add_option("--dim", o.dim, "Synthetic feature dimension")->capture_default_str()->group("Dataset");
  cmd->add_option("--p-intra", o.p_intra, "Synthetic intra-class edge probability")->capture_default_str()->group("Dataset");
  cmd->add_option("--p-inter", o.p_inter, "Synthetic inter-class edge probability")->capture_default_str()->group("Dataset");
  cmd->add_option("--noise", o.noise, "Synthetic feature noise standard deviation")->capture_default_str()->group("Dataset");
  cmd->add_option("--data-seed", o.data_seed, "Synthetic graph seed")->capture_default_str()->group("Dataset");
  cmd->add_option("--n-train", o.n_train, "Training nodes (default 140 for files, N/5 for synthetic)")->group("Dataset");
  cmd->add_option("--n-val", o.n_val, "Validation nodes (default 500 for files, 2N/5 for synthetic)")->group("Dataset");
  cmd->add_option("--n-test", o.n_test, "Test nodes (default 1000 for files, the rest for synthetic)")->group("Dataset");
  cmd->add_option("--split-seed", o.split_seed, "Split seed")->capture_default_str()->group("Dataset");
  cmd->add_flag("--symmetrize", o.symmetrize, "Add the reverse of every directed edge")->group("Dataset");
  cmd->add_flag("--row-normalize", o.row_normalize, "Scale each feature row to sum 1")->group("Dataset");
}

inline void add_model_options(CLI::App* cmd, ModelOptions& o) {
  cmd->add_option("--activation", o.activation, "Hidden activation")
      ->check(CLI::IsMember({"relu", "tanh", "sigmoid"}))
      ->capture_default_str();
  cmd->add_option("--hidden", o.hidden, "Hidden layer widths")->join(',')->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Training epochs (one full-batch update each)")->capture_default_str();
  cmd->add_option("--optimizer", o.optimizer,
                  "Update rule. Default adam; plain full-batch gradient descent is --optimizer sgd")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  cmd->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Model initialization seed")->capture_default_str();
  cmd->add_option("--snapshot-every", o.snapshot_every, "Record activations every k-th epoch")->capture_default_str();
  cmd->add_option("--spec", o.spec_in, "Read layer kind, widths, activation and seed from a ModelSpec JSON file");
}

inline void add_estimate_options(CLI::App* cmd, EstimateOptions& o, const std::string& seed_names = "--mi-seed") {
  cmd->add_option("--sigma2", o.sigma2, "Kernel noise variance (0.1 suits Cora-scale data)")->capture_default_str();
  cmd->add_option("--max-rows", o.max_rows, "Row cap per estimate; larger traces are subsampled")->capture_default_str();
  cmd->add_option(seed_names, o.seed, "Subsampling seed")->capture_default_str();
  cmd->add_flag("--no-stratify", o.no_stratify, "Subsample uniformly instead of per class");
  cmd->add_flag("--bits", o.bits, "Report bits instead of nats");
  cmd->add_flag("--lower-class-c2", o.lower_class_c2)->group("");  // sensitivity switch, hidden
  cmd->add_option("--threads", o.threads, "Worker threads (default: INFOPLANE_THREADS or hardware)");
}

inline std::vector<std::int64_t> parse_widths(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoll(tok, &used);
      if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--hidden: bad width '" + tok + "'");
    }
  }
  if (out.empty()) throw UsageError("--hidden: need at least one width");
  return out;
}

inline std::filesystem::path find_with_extension(const std::filesystem::path& dir, const std::string& ext) {
  if (std::filesystem::exists(dir / ("cora" + ext))) return dir / ("cora" + ext);
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ext) return entry.path();
  throw std::runtime_error("no *" + ext + " file in " + dir.string());
}

inline GraphDataset build_dataset(const DatasetOptions& o) {
  const int sources = !o.cora_dir.empty() + !o.csv_dir.empty() + !o.synthetic.empty();
  if (sources != 1) throw UsageError("choose exactly one of --dataset, --csv, --synthetic");
  GraphDataset ds;
  bool synthetic = false;
  if (!o.cora_dir.empty()) {
    ds = load_edgelist_dataset(find_with_extension(o.cora_dir, ".content"), find_with_extension(o.cora_dir, ".cites"));
  } else if (!o.csv_dir.empty()) {
    ds = load_csv_dataset(o.csv_dir);
  } else {
    PlantedPartitionParams p;
    const auto x = o.synthetic.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument("");
      p.n_per_class = std::stoll(o.synthetic.substr(0, x));
      p.num_classes = std::int32_t(std::stoll(o.synthetic.substr(x + 1)));
    } catch (const std::exception&) {
      throw UsageError("--synthetic expects <nodes per class>x<classes>, got '" + o.synthetic + "'");
    }
    p.dim = std::max<std::int64_t>(o.dim, p.num_classes);
    p.p_intra = o.p_intra;
    p.p_inter = o.p_inter;
    p.feature_noise = o.noise;
    p.seed = o.data_seed;
    ds = synth_planted_partition(p);
    synthetic = true;
  }
  if (o.symmetrize) ds = symmetrize(std::move(ds));
  if (o.row_normalize) ds = row_normalize(std::move(ds));
  const auto n = ds.num_nodes();
  const auto n_train = o.n_train.value_or(synthetic ? std::max<std::int64_t>(ds.num_classes, n / 5) : 140);
  const auto n_val = o.n_val.value_or(synthetic ? (2 * n) / 5 : 500);
  const auto n_test = o.n_test.value_or(synthetic ? std::max<std::int64_t>(0, n - n_train - n_val) : 1000);
  return make_split_masks(std::move(ds), n_train, n_val, n_test, o.split_seed);
}

inline ModelSpec build_spec(const ModelOptions& o, const std::string& arch, std::int64_t classes) {
  ModelSpec spec;
  if (!o.spec_in.empty()) {
    std::ifstream in(o.spec_in);
    if (!in) throw std::runtime_error("cannot open " + o.spec_in);
    spec = spec_from_json(nlohmann::json::parse(in));
  } else {
    spec.layer_kind = parse_layer_kind(arch);
    spec.hidden_dims = parse_widths(o.hidden);
    spec.activation = parse_activation(o.activation);
    spec.seed = o.seed;
  }
  spec.output_dim = classes;
  return spec;
}

inline TrainConfig build_train_config(const ModelOptions& o) {
  if (o.epochs < 1) throw UsageError("--epochs must be >= 1");
  if (o.snapshot_every < 1) throw UsageError("--snapshot-every must be >= 1");
  if (!(o.lr >= 0.0)) throw UsageError("--lr must be >= 0");
  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.optimizer = parse_optimizer(o.optimizer);
  cfg.learning_rate = o.lr;
  cfg.seed = o.seed;
  cfg.snapshot_every = o.snapshot_every;
  return cfg;
}

inline MiConfig build_mi_config(const EstimateOptions& o) {
  if (!(o.sigma2 > 0.0)) throw UsageError("sigma2 must be positive");
  if (o.max_rows < 2) throw UsageError("--max-rows must be >= 2");
  MiConfig cfg;
  cfg.sigma2 = o.sigma2;
  cfg.max_rows = o.max_rows;
  cfg.subsample_seed = o.seed;
  cfg.stratified = !o.no_stratify;
  cfg.lower_bound_uniform = !o.lower_class_c2;
  return cfg;
}

inline unsigned thread_count(unsigned requested) { return requested ? requested : default_thread_count(); }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

struct RunOutputs {
  TrainRecord record;
  Model model;
};

// Trains one architecture and writes its trace.
inline RunOutputs run_training(const GraphDataset& ds, const ModelSpec& spec, const TrainConfig& cfg,
                               const std::filesystem::path& trace_path) {
  RunOutputs out;
  out.model = init_model(spec, ds.feature_dim());
  TraceWriter writer(trace_path, make_trace_header(out.model, ds));
  out.record = train_full_batch(out.model, ds, cfg, &writer);
  writer.close();
  return out;
}

inline void write_metrics(const std::filesystem::path& path, const TrainRecord& rec) {
  std::ostringstream s;
  s << kMetricsCsvHeader << '\n';
  write_metrics_csv(s, rec);
  write_text(path, s.str());
}

// Removes registered files unless released.
class OutputGuard {
 public:
  void add(const std::filesystem::path& p) { paths_.push_back(p); }
  void release() { paths_.clear(); }
  ~OutputGuard() {
    std::error_code ec;
    for (const auto& p : paths_) std::filesystem::remove(p, ec);
  }

 private:
  std::vector<std::filesystem::path> paths_;
};

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Information-plane analysis: train small graph/dense networks, trace hidden activations, "
               "and estimate pairwise-distance mutual-information bounds"};
  app.name("infoplane");
  app.set_config("--config", "", "Read option defaults from a key=value file (flags take precedence)");
  app.require_subcommand(1);

  // trace info
  auto* trace_cmd = app.add_subcommand("trace", "Inspect trace files");
  trace_cmd->require_subcommand(1);
  auto* info_cmd = trace_cmd->add_subcommand("info", "Print trace header metadata as JSON");
  std::string info_path;
  info_cmd->add_option("path", info_path, "Trace file")->required();

  // dataset
  auto* dataset_cmd = app.add_subcommand("dataset", "Load or generate a dataset and print summary JSON");
  DatasetOptions dataset_opts;
  add_dataset_options(dataset_cmd, dataset_opts);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model and record its hidden-layer trace");
  DatasetOptions train_data;
  ModelOptions train_model;
  std::string train_out = "trace.bin", train_metrics = "metrics.csv", spec_out;
  add_dataset_options(train_cmd, train_data);
  train_cmd->add_option("--arch", train_model.arch, "Architecture")
      ->check(CLI::IsMember({"mlp", "gcn", "gat"}))
      ->capture_default_str();
  add_model_options(train_cmd, train_model);
  train_cmd->add_option("--out", train_out, "Trace output path")->capture_default_str();
  train_cmd->add_option("--metrics", train_metrics, "Per-epoch metrics CSV path")->capture_default_str();
  train_cmd->add_option("--spec-out", spec_out, "Write the ModelSpec used as JSON");

  // estimate
  auto* est_cmd = app.add_subcommand("estimate", "Compute the information plane of a trace");
  std::string est_trace, est_out = "plane.csv";
  EstimateOptions est_opts;
  est_cmd->add_option("--trace", est_trace, "Trace file")->required();
  est_cmd->add_option("--out", est_out, "Plane CSV output path")->capture_default_str();
  add_estimate_options(est_cmd, est_opts, "--seed,--mi-seed");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "Render a plane CSV as an SVG information plane");
  std::string plot_plane, plot_out = "plane.svg", plot_bound = "upper", plot_units = "nats", plot_title;
  bool plot_inset = false;
  plot_cmd->add_option("--plane", plot_plane, "Plane CSV")->required();
  plot_cmd->add_option("--out", plot_out, "SVG output path")->capture_default_str();
  plot_cmd->add_option("--bound", plot_bound, "Which bound to draw")
      ->check(CLI::IsMember({"upper", "lower"}))
      ->capture_default_str();
  plot_cmd->add_option("--units", plot_units, "Axis unit label (match the estimate run)")
      ->check(CLI::IsMember({"nats", "bits"}))
      ->capture_default_str();
  plot_cmd->add_flag("--inset", plot_inset, "Add a zoom inset of the last 20% of epochs");
  plot_cmd->add_option("--title", plot_title, "Figure title");

  // dpi
  auto* dpi_cmd = app.add_subcommand("dpi", "Check the data-processing inequality across layers");
  std::string dpi_plane, dpi_axis = "xz", dpi_bound = "upper", dpi_json;
  double dpi_tol = kDefaultDpiTolerance;
  dpi_cmd->add_option("--plane", dpi_plane, "Plane CSV")->required();
  dpi_cmd->add_option("--axis", dpi_axis, "xz = I(X;Z), zy = I(Z;Y)")
      ->check(CLI::IsMember({"xz", "zy"}))
      ->capture_default_str();
  dpi_cmd->add_option("--bound", dpi_bound, "Bound variant")->check(CLI::IsMember({"upper", "lower"}))->capture_default_str();
  dpi_cmd->add_option("--tolerance", dpi_tol, "Allowed increase between adjacent layers")->capture_default_str();
  dpi_cmd->add_option("--json", dpi_json, "Also write the report as JSON to this path");

  // compare
  auto* cmp_cmd = app.add_subcommand("compare", "Train mlp, gcn and gat side by side and compare their planes");
  DatasetOptions cmp_data;
  ModelOptions cmp_model;
  EstimateOptions cmp_est;
  std::string cmp_dir = "compare_out";
  double cmp_tol = kDefaultDpiTolerance;
  bool cmp_parallel = false;
  add_dataset_options(cmp_cmd, cmp_data);
  add_model_options(cmp_cmd, cmp_model);
  add_estimate_options(cmp_cmd, cmp_est);
  cmp_cmd->add_option("--out-dir", cmp_dir, "Output directory")->capture_default_str();
  cmp_cmd->add_option("--tolerance", cmp_tol, "DPI tolerance for the summary table")->capture_default_str();
  cmp_cmd->add_flag("--parallel", cmp_parallel, "Train the three architectures in parallel threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help requests carry exit code 0; everything else is a usage error.
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (info_cmd->parsed()) {
      out << trace_info_json(info_path).dump(2) << '\n';
      return kExitOk;
    }

    if (dataset_cmd->parsed()) {
      out << dataset_summary(build_dataset(dataset_opts)).dump(2) << '\n';
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      const auto cfg = build_train_config(train_model);
      const auto ds = build_dataset(train_data);
      const auto spec = build_spec(train_model, train_model.arch, ds.num_classes);
      OutputGuard guard;
      guard.add(train_out);
      guard.add(train_metrics);
      const auto run = run_training(ds, spec, cfg, train_out);
      write_metrics(train_metrics, run.record);
      if (!spec_out.empty()) write_text(spec_out, spec_to_json(spec).dump(2) + "\n");
      guard.release();
      const auto& last = run.record.epochs.back();
      out << "trained " << to_string(spec.layer_kind) << " for " << cfg.epochs << " epochs: train_acc "
          << last.train_acc << ", val_acc " << last.val_acc << ", test_acc " << last.test_acc << '\n';
      return kExitOk;
    }

    if (est_cmd->parsed()) {
      const auto cfg = build_mi_config(est_opts);
      const auto plane = plane_from_file(est_trace, cfg, thread_count(est_opts.threads));
      write_plane_csv(est_out, plane, est_opts.bits ? std::numbers::ln2 : 1.0);
      out << "wrote " << plane.size() << " plane points to " << est_out << '\n';
      return kExitOk;
    }

    if (plot_cmd->parsed()) {
      PlaneFigureSpec fig;
      fig.bound = parse_bound(plot_bound);
      fig.units = plot_units;
      fig.inset = plot_inset;
      fig.title = plot_title;
      write_text(plot_out, render_plane_svg(read_plane_csv(plot_plane), fig));
      return kExitOk;
    }

    if (dpi_cmd->parsed()) {
      if (!(dpi_tol >= 0.0)) throw UsageError("--tolerance must be >= 0");
      const auto report = dpi_report(read_plane_csv(dpi_plane), parse_axis(dpi_axis), parse_bound(dpi_bound), dpi_tol);
      print_dpi_table(out, report);
      if (!dpi_json.empty()) write_text(dpi_json, dpi_report_json(report).dump(2) + "\n");
      return report.all_hold() ? kExitOk : kExitDpiViolated;
    }

    if (cmp_cmd->parsed()) {
      const auto cfg = build_train_config(cmp_model);
      const auto mi_cfg = build_mi_config(cmp_est);
      if (!(cmp_tol >= 0.0)) throw UsageError("--tolerance must be >= 0");
      const auto ds = build_dataset(cmp_data);
      const std::filesystem::path dir = cmp_dir;
      std::filesystem::create_directories(dir);
      const std::vector<std::string> archs = {"mlp", "gcn", "gat"};
      OutputGuard guard;
      for (const auto& a : archs) {
        guard.add(dir / ("trace_" + a + ".bin"));
        guard.add(dir / ("plane_" + a + ".csv"));
        guard.add(dir / ("plane_" + a + ".svg"));
      }
      for (const char* f : {"metrics.csv", "accuracy.svg", "dpi_summary.csv"}) guard.add(dir / f);

      std::vector<RunOutputs> runs(archs.size());
      std::vector<std::exception_ptr> errors(archs.size());
      auto train_one = [&](std::size_t k) {
        try {
          runs[k] = run_training(ds, build_spec(cmp_model, archs[k], ds.num_classes), cfg,
                                 dir / ("trace_" + archs[k] + ".bin"));
        } catch (...) {
          errors[k] = std::current_exception();
        }
      };
      if (cmp_parallel) {
        std::vector<std::jthread> workers;
        for (std::size_t k = 0; k < archs.size(); ++k) workers.emplace_back(train_one, k);
      } else {
        for (std::size_t k = 0; k < archs.size(); ++k) train_one(k);
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);

      std::ostringstream metrics, summary;
      metrics << "arch," << kMetricsCsvHeader << '\n';
      summary << "arch,axis,bound,tolerance,epochs,fraction_holding,max_gap,final_train_acc,final_val_acc\n";
      summary.precision(17);
      std::vector<AccuracySeries> series;
      const double divisor = cmp_est.bits ? std::numbers::ln2 : 1.0;
      for (std::size_t k = 0; k < archs.size(); ++k) {
        write_metrics_csv(metrics, runs[k].record, archs[k]);
        series.push_back({archs[k], runs[k].record});
        const auto plane = plane_from_file(dir / ("trace_" + archs[k] + ".bin"), mi_cfg, thread_count(cmp_est.threads));
        write_plane_csv(dir / ("plane_" + archs[k] + ".csv"), plane, divisor);
        PlaneFigureSpec fig;
        fig.inset = true;
        fig.units = cmp_est.bits ? "bits" : "nats";
        fig.title = archs[k];
        auto scaled = plane;
        for (auto& e : scaled) {
          e.i_xz_upper /= divisor, e.i_xz_lower /= divisor, e.i_zy_upper /= divisor, e.i_zy_lower /= divisor;
        }
        write_text(dir / ("plane_" + archs[k] + ".svg"), render_plane_svg(scaled, fig));
        const auto& last = runs[k].record.epochs.back();
        if (runs[k].model.num_hidden() >= 2) {
          for (auto axis : {PlaneAxis::kXZ, PlaneAxis::kZY}) {
            const auto r = dpi_report(scaled, axis, Bound::kUpper, cmp_tol);
            summary << archs[k] << ',' << to_string(axis) << ",upper," << cmp_tol << ',' << r.epochs.size() << ','
                    << r.fraction_holding << ',' << r.max_gap << ',' << last.train_acc << ',' << last.val_acc << '\n';
          }
        }
      }
      write_text(dir / "metrics.csv", metrics.str());
      write_text(dir / "accuracy.svg", render_accuracy_svg(series));
      write_text(dir / "dpi_summary.csv", summary.str());
      guard.release();
      out << summary.str();
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace infoplane::cli
