#include "fmv2/cli.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "fmv2/data.hpp"
#include "fmv2/errors.hpp"
#include "fmv2/frequency.hpp"
#include "fmv2/grad_check.hpp"
#include "fmv2/model.hpp"
#include "fmv2/ops.hpp"
#include "fmv2/rng.hpp"
#include "fmv2/training.hpp"

namespace fmv2::cli {

namespace {

namespace fs = std::filesystem;
using model::ModelConfig;
using model::ModelParams;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Knob {
  const char* key;
  const char* help;
};

const std::vector<Knob> kModelKnobs = {
    {"joints", "joints J"},
    {"in_channels", "input channels per joint"},
    {"frames", "frames F after resampling"},
    {"embed_channels", "embedding channels C_e (even)"},
    {"attn_dim", "query/key dimension d"},
    {"n_hfab", "high-frequency attention blocks"},
    {"n_lfab", "low-frequency attention blocks"},
    {"n_sab", "spatial attention blocks"},
    {"n_tab", "temporal attention blocks"},
    {"num_classes", "output classes"},
    {"ct_groups", "channel-transform groups (must divide C_e)"},
    {"partition", "frequency partition N, quoted against 25 joints"},
    {"ell", "low-frequency operator"},
    {"h", "high-frequency operator"},
    {"axis", "transform axis: temporal | joint"},
    {"mode", "operator mode: high-low | uniform"},
    {"uniform", "single operator used by uniform mode"},
    {"test_mode", "1 widens operator ranges so h = ell = 1 is allowed"},
    {"head_norm", "1 standardizes the pooled features before the head"},
    {"seed", "seed for initialisation and shuffling"},
};

const std::vector<Knob> kTrainKnobs = {
    {"epochs", "training epochs"},
    {"batch_size", "samples per step"},
    {"base_lr", "peak learning rate"},
    {"warmup_epochs", "linear warmup epochs"},
    {"decay_epochs", "comma-separated epochs where the rate is multiplied by decay_factor"},
    {"decay_factor", "step decay factor"},
    {"momentum", "SGD momentum"},
    {"weight_decay", "L2 weight decay"},
    {"decay_all", "1 also decays biases and embedding tables"},
    {"clip_norm", "global gradient norm clip, 0 disables"},
    {"threads", "worker threads"},
};

std::map<std::string, std::string> train_defaults() {
  const training::TrainConfig tc;
  std::map<std::string, std::string> d;
  d["epochs"] = std::to_string(tc.epochs);
  d["batch_size"] = std::to_string(tc.batch_size);
  d["base_lr"] = CLI::detail::to_string(tc.schedule.base_lr);
  d["warmup_epochs"] = std::to_string(tc.schedule.warmup_epochs);
  std::string decays;
  for (auto e : tc.schedule.decay_epochs) decays += (decays.empty() ? "" : ",") + std::to_string(e);
  d["decay_epochs"] = decays;
  d["decay_factor"] = CLI::detail::to_string(tc.schedule.decay_factor);
  d["momentum"] = CLI::detail::to_string(tc.momentum);
  d["weight_decay"] = CLI::detail::to_string(tc.weight_decay);
  d["decay_all"] = "0";
  d["clip_norm"] = CLI::detail::to_string(tc.clip_norm);
  d["threads"] = std::to_string(tc.threads);
  return d;
}

std::map<std::string, std::string> model_defaults(const ModelConfig& base) {
  std::map<std::string, std::string> d;
  std::istringstream is(base.serialize());
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    std::string v = tok.substr(eq + 1);
    // shortest decimal that still round-trips, for readable help text
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end && *end == '\0' && v.find('.') != std::string::npos) {
      char buf[32];
      for (int p = 1; p <= 17; ++p) {
        std::snprintf(buf, sizeof buf, "%.*g", p, x);
        if (std::strtod(buf, nullptr) == x) break;
      }
      v = buf;
    }
    d[tok.substr(0, eq)] = v;
  }
  return d;
}

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  for (auto& ch : f)
    if (ch == '_') ch = '-';
  return f;
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const auto r = std::stoull(v, &pos);
    if (pos == v.size()) return static_cast<std::size_t>(r);
  } catch (const std::exception&) {
  }
  throw UsageError(flag_name(key) + " expects a non-negative integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos == v.size()) return r;
  } catch (const std::exception&) {
  }
  throw UsageError(flag_name(key) + " expects a number, got '" + v + "'");
}

// Model/training knobs registered on one subcommand.
class Knobs {
 public:
  Knobs(CLI::App* app, const ModelConfig& base, bool with_training) : base_(base) {
    app->add_option("--config", config_path_, "key=value file; flags override it")->check(CLI::ExistingFile);
    add(app, kModelKnobs, model_defaults(base));
    if (with_training) add(app, kTrainKnobs, train_defaults());
  }

  // defaults ← config file ← explicit flags
  std::map<std::string, std::string> resolve() const {
    std::map<std::string, std::string> values = defaults_;
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
          throw UsageError(config_path_ + ":" + std::to_string(line_no) + ": expected key=value");
        auto trim = [](std::string s) {
          const auto b = s.find_first_not_of(" \t\r");
          const auto e = s.find_last_not_of(" \t\r");
          return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        for (auto& ch : key)
          if (ch == '-') ch = '_';
        if (!known(key))
          throw UsageError(config_path_ + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
        if (defaults_.count(key)) values[key] = trim(line.substr(eq + 1));
      }
    }
    for (const auto& [key, opt] : options_)
      if (opt->count() > 0) values[key] = storage_.at(key);
    return values;
  }

  ModelConfig model(const std::map<std::string, std::string>& values) const {
    ModelConfig cfg = base_;
    try {
      for (const auto& k : kModelKnobs) cfg.set(k.key, values.at(k.key));
      cfg.validate();
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }

  static training::TrainConfig train(const std::map<std::string, std::string>& v, const ModelConfig& cfg) {
    training::TrainConfig tc;
    tc.epochs = to_size("epochs", v.at("epochs"));
    tc.batch_size = to_size("batch_size", v.at("batch_size"));
    tc.schedule.base_lr = to_double("base_lr", v.at("base_lr"));
    tc.schedule.warmup_epochs = to_size("warmup_epochs", v.at("warmup_epochs"));
    tc.schedule.decay_epochs.clear();
    for (const auto& e : split_list(v.at("decay_epochs"))) tc.schedule.decay_epochs.push_back(to_size("decay_epochs", e));
    tc.schedule.decay_factor = to_double("decay_factor", v.at("decay_factor"));
    tc.momentum = to_double("momentum", v.at("momentum"));
    tc.weight_decay = to_double("weight_decay", v.at("weight_decay"));
    tc.decay_all = to_size("decay_all", v.at("decay_all")) != 0;
    tc.clip_norm = to_double("clip_norm", v.at("clip_norm"));
    if (tc.clip_norm < 0.0) throw UsageError("--clip-norm must be non-negative");
    tc.threads = static_cast<int>(to_size("threads", v.at("threads")));
    tc.seed = cfg.seed;
    if (tc.batch_size == 0) throw UsageError("--batch-size must be positive");
    if (tc.threads < 1) throw UsageError("--threads must be at least 1");
    try {
      tc.schedule.validate();
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
    return tc;
  }

 private:
  static bool known(const std::string& key) {
    for (const auto* list : {&kModelKnobs, &kTrainKnobs})
      for (const auto& k : *list)
        if (key == k.key) return true;
    return false;
  }

  void add(CLI::App* app, const std::vector<Knob>& knobs, const std::map<std::string, std::string>& defaults) {
    for (const auto& k : knobs) {
      defaults_[k.key] = defaults.at(k.key);
      auto& slot = storage_[k.key];
      slot = defaults_[k.key];
      options_[k.key] = app->add_option(flag_name(k.key), slot, k.help)->default_str(defaults_[k.key]);
    }
  }

  ModelConfig base_;
  std::string config_path_;
  std::map<std::string, std::string> defaults_;
  std::map<std::string, std::string> storage_;
  std::map<std::string, CLI::Option*> options_;
};

struct SplitOptions {
  std::string data;
  std::string key = "subject";
  std::string test_keys = "4";
  std::string stream = "joint";

  void add(CLI::App* app, bool require_data = true) {
    auto* d = app->add_option("--data", data, "dataset file (.jsonl or SKL1)");
    if (require_data) d->required();
    app->add_option("--split-key", key, "split by subject | view")->capture_default_str();
    app->add_option("--test-keys", test_keys, "comma-separated subject/view ids held out for test")
        ->capture_default_str();
    app->add_option("--stream", stream, "joint | bone | joint-motion | bone-motion")->capture_default_str();
  }

  data::Stream parsed_stream() const {
    try {
      return data::parse_stream(stream);
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
  }
};

struct LoadedSplits {
  std::vector<data::SkeletonSequence> seqs;
  data::DatasetManifest manifest;
  training::Dataset train;
  training::Dataset test;
};

LoadedSplits load_splits(const SplitOptions& so, const ModelConfig& cfg) {
  if (so.key != "subject" && so.key != "view") throw UsageError("--split-key must be subject or view");
  std::set<int> keys;
  for (const auto& k : split_list(so.test_keys)) keys.insert(static_cast<int>(to_size("test_keys", k)));
  const data::Stream stream = so.parsed_stream();
  LoadedSplits out;
  std::vector<std::uint64_t> offsets;
  const fs::path path(so.data);
  out.seqs = path.extension() == ".jsonl" ? data::load_jsonl(path, &offsets) : data::load_binary(path, &offsets);
  for (const auto& s : out.seqs)
    if (s.joints != cfg.joints || s.channels != cfg.in_channels)
      throw ContractError("dataset sample is " + std::to_string(s.joints) + " joints × " +
                          std::to_string(s.channels) + " channels, model expects " +
                          std::to_string(cfg.joints) + " × " + std::to_string(cfg.in_channels));
  std::vector<std::string> names;
  for (std::size_t k = 0; k < cfg.num_classes; ++k) names.push_back("class" + std::to_string(k));
  out.manifest = data::build_manifest(out.seqs, names,
                                      so.key == "view" ? data::SplitKey::kView : data::SplitKey::kSubject,
                                      keys, offsets);
  out.train = training::make_dataset(out.seqs, out.manifest.indices(data::Split::kTrain), cfg.frames, stream);
  out.test = training::make_dataset(out.seqs, out.manifest.indices(data::Split::kTest), cfg.frames, stream);
  return out;
}

void write_scores(const fs::path& path, const Tensor& scores, const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const std::size_t k = scores.dim(1);
  char buf[32];
  for (std::size_t r = 0; r < scores.dim(0); ++r) {
    out << labels[r];
    for (std::size_t c = 0; c < k; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", scores.data()[r * k + c]);
      out << ',' << buf;
    }
    out << '\n';
  }
}

void read_scores(const fs::path& path, Tensor& scores, std::vector<int>& labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<double> flat;
  std::size_t cols = 0, rows = 0;
  std::string line;
  labels.clear();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_list(line);
    if (cells.size() < 2) throw FormatError(path.string() + ": score line needs a label and scores");
    if (cols == 0) cols = cells.size() - 1;
    if (cells.size() - 1 != cols)
      throw FormatError(path.string() + ": row " + std::to_string(rows) + " has " +
                        std::to_string(cells.size() - 1) + " scores, expected " + std::to_string(cols));
    labels.push_back(std::stoi(cells[0]));
    for (std::size_t c = 1; c < cells.size(); ++c) flat.push_back(std::stod(cells[c]));
    ++rows;
  }
  if (rows == 0) throw FormatError(path.string() + ": no scores");
  scores = Tensor({rows, cols}, std::move(flat));
}

void write_matrix(const fs::path& path, const Tensor& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  char buf[32];
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    for (std::size_t c = 0; c < m.dim(1); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m.data()[r * m.dim(1) + c]);
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

training::TrainResult train_with_log(const LoadedSplits& splits, const ModelConfig& cfg,
                                     const training::TrainConfig& tc, std::ostream& out,
                                     std::ostream* metrics) {
  return training::train_loop(splits.train, splits.test, cfg, model::init_params(cfg, cfg.seed), tc,
                              [&](const training::EpochMetrics& m) {
                                out << training::format_metrics(m) << '\n' << std::flush;
                                if (metrics) *metrics << training::format_metrics(m) << '\n';
                              });
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frequency-aware mixed attention skeleton action recognition", "fmv2"};
  app.require_subcommand(1);
  // "-h" would clash with the --h operator flag.
  app.set_help_flag("--help", "print this help and exit");

  // generate-synth
  data::SynthOptions synth;
  std::string synth_out;
  auto* gen = app.add_subcommand("generate-synth", "write a synthetic frequency-signature dataset");
  gen->add_option("--classes", synth.num_classes, "classes (half low, half high frequency)")->capture_default_str();
  gen->add_option("--per-class", synth.samples_per_class, "samples per class")->capture_default_str();
  gen->add_option("--joints", synth.joints, "joints")->capture_default_str();
  gen->add_option("--frames", synth.frames, "frames")->capture_default_str();
  gen->add_option("--channels", synth.channels, "coordinates per joint")->capture_default_str();
  gen->add_option("--subjects", synth.subjects, "subject ids cycled over samples")->capture_default_str();
  gen->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  gen->add_option("--noise", synth.noise_sigma, "gaussian noise sigma")->capture_default_str();
  gen->add_option("--out", synth_out, "output file (.jsonl or SKL1)")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model and keep the best-test checkpoint");
  Knobs train_knobs(train, ModelConfig{}, true);
  SplitOptions train_split;
  train_split.add(train);
  std::string train_out, train_final, train_metrics;
  train->add_option("--out", train_out, "best-test-accuracy checkpoint")->required();
  train->add_option("--final-out", train_final, "checkpoint after the last epoch");
  train->add_option("--metrics", train_metrics, "metrics log file");

  // eval
  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  SplitOptions eval_split;
  eval_split.add(eval);
  std::string eval_ckpt, eval_which = "test", eval_scores;
  int eval_threads = 1;
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", eval_which, "test | train | all")->capture_default_str();
  eval->add_option("--scores-out", eval_scores, "write label,score... rows for ensembling");
  eval->add_option("--threads", eval_threads, "worker threads")->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  Knobs gc_knobs(gc, ModelConfig::tiny(), false);
  std::size_t gc_samples = 20, gc_batch = 2;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  gc->add_option("--samples", gc_samples, "parameter entries to check (0 = all)")->capture_default_str();
  gc->add_option("--batch", gc_batch, "random inputs in the loss")->capture_default_str();
  gc->add_option("--epsilon", gc_eps, "central-difference step")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "relative error bound")->capture_default_str();

  // inspect-dct
  auto* insp = app.add_subcommand("inspect-dct", "per-joint low/high band energy of one sample");
  std::string insp_data;
  std::size_t insp_index = 0, insp_frames = 64;
  int insp_partition = 13;
  insp->add_option("--data", insp_data, "dataset file")->required()->check(CLI::ExistingFile);
  insp->add_option("--index", insp_index, "sample index")->capture_default_str();
  insp->add_option("--frames", insp_frames, "frames after resampling")->capture_default_str();
  insp->add_option("--partition", insp_partition, "partition N quoted against 25 joints")->capture_default_str();

  // count-params
  auto* cp = app.add_subcommand("count-params", "parameter counts of this config and its seven-block uniform baseline");
  Knobs cp_knobs(cp, ModelConfig{}, false);

  // ensemble
  auto* ens = app.add_subcommand("ensemble", "weighted fusion of per-stream score files");
  std::vector<std::string> ens_scores;
  std::vector<double> ens_weights;
  std::string ens_out;
  ens->add_option("--scores", ens_scores, "score files from eval --scores-out")->required()->delimiter(',');
  ens->add_option("--weights", ens_weights, "one weight per score file (default all 1)")->delimiter(',');
  ens->add_option("--out", ens_out, "write one predicted class per line");

  // sweep
  auto* sw = app.add_subcommand("sweep", "grid over the partition N or the (ell, h) operator pair");
  Knobs sw_knobs(sw, ModelConfig{}, true);
  SplitOptions sw_split;
  sw_split.add(sw);
  std::string sw_grid = "partition", sw_values, sw_out;
  sw->add_option("--grid", sw_grid, "partition | operators")->capture_default_str();
  sw->add_option("--values", sw_values,
                 "partition: 1,3,...,17; operators: ell:h pairs 0.1:1.1,...,0.9:1.9");
  sw->add_option("--out", sw_out, "results table (default stdout)");

  // dump-attention
  auto* dump = app.add_subcommand("dump-attention", "write every block's attention maps as CSV matrices");
  SplitOptions dump_split;
  dump_split.add(dump);
  std::string dump_ckpt, dump_dir, dump_indices = "0";
  dump->add_option("--checkpoint", dump_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  dump->add_option("--indices", dump_indices, "comma-separated sample indices in the data file")->capture_default_str();
  dump->add_option("--out-dir", dump_dir, "output directory")->required();

  if (args.empty()) {
    err << app.help();
    return 2;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    err << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 2;
  }

  try {
    if (*gen) {
      if (synth.num_classes < 2) throw UsageError("--classes must be at least 2");
      const auto seqs = data::synth_generate(synth);
      data::write_any(synth_out, seqs);
      out << "wrote " << seqs.size() << " sequences to " << synth_out << '\n';
      return 0;
    }

    if (*train) {
      const auto values = train_knobs.resolve();
      const ModelConfig cfg = train_knobs.model(values);
      auto tc = Knobs::train(values, cfg);
      tc.checkpoint_path = train_out;
      omp_set_num_threads(tc.threads);
      const auto splits = load_splits(train_split, cfg);
      std::ofstream metrics;
      if (!train_metrics.empty()) {
        metrics.open(train_metrics);
        if (!metrics) throw std::runtime_error("cannot open '" + train_metrics + "' for writing");
      }
      out << "train=" << splits.train.size() << " test=" << splits.test.size()
          << " params=" << model::count_parameters(cfg) << '\n';
      const auto result = train_with_log(splits, cfg, tc, out, metrics.is_open() ? &metrics : nullptr);
      if (!train_final.empty()) model::save_model(train_final, cfg, result.params);
      if (result.metrics.empty()) model::save_model(train_out, cfg, result.best_params);
      out << "best_epoch=" << result.best_epoch << " best_test_acc=" << fmt(result.best_test_acc) << '\n';
      return 0;
    }

    if (*eval) {
      if (eval_which != "test" && eval_which != "train" && eval_which != "all")
        throw UsageError("--split must be test, train or all");
      if (eval_threads < 1) throw UsageError("--threads must be at least 1");
      omp_set_num_threads(eval_threads);
      const auto [cfg, params] = model::load_model(eval_ckpt);
      const auto splits = load_splits(eval_split, cfg);
      training::Dataset ds;
      if (eval_which != "test") ds = splits.train;
      if (eval_which != "train") {
        ds.inputs.insert(ds.inputs.end(), splits.test.inputs.begin(), splits.test.inputs.end());
        ds.labels.insert(ds.labels.end(), splits.test.labels.begin(), splits.test.labels.end());
      }
      const Tensor scores = training::predict(params, cfg, ds, eval_threads);
      out << "samples=" << ds.size() << " accuracy=" << fmt(training::accuracy(scores, ds.labels)) << '\n';
      if (!eval_scores.empty()) write_scores(eval_scores, scores, ds.labels);
      return 0;
    }

    if (*gc) {
      const ModelConfig cfg = gc_knobs.model(gc_knobs.resolve());
      if (gc_batch == 0) throw UsageError("--batch must be positive");
      ModelParams base = model::init_params(cfg, cfg.seed);
      Xorshift64Star rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
      std::vector<std::string> names;
      std::vector<Tensor> leaves;
      for (auto& [name, t] : base) {
        Tensor leaf = t.as_leaf();
        for (auto& v : leaf.mutable_data()) v += rng.uniform(-0.1, 0.1);
        names.push_back(name);
        leaves.push_back(leaf);
      }
      std::vector<Tensor> batch;
      std::vector<int> labels;
      for (std::size_t b = 0; b < gc_batch; ++b) {
        std::vector<double> x(cfg.joints * cfg.in_channels * cfg.frames);
        for (auto& v : x) v = rng.gaussian();
        batch.emplace_back(Shape{cfg.joints, cfg.in_channels, cfg.frames}, std::move(x));
        labels.push_back(static_cast<int>(rng.below(cfg.num_classes)));
      }
      auto loss = [&](const std::vector<Tensor>& ps) {
        ModelParams p;
        for (std::size_t i = 0; i < ps.size(); ++i) p.emplace(names[i], ps[i]);
        return training::cross_entropy(model::forward(batch, p, cfg), labels);
      };
      GradCheckOptions opts;
      opts.epsilon = gc_eps;
      opts.tolerance = gc_tol;
      opts.samples = gc_samples;
      opts.seed = cfg.seed;
      const auto report = grad_check(loss, leaves, opts);
      for (const auto& e : report.entries)
        out << names[e.param] << '[' << e.index << "] analytic=" << fmt(e.analytic)
            << " numeric=" << fmt(e.numeric) << " rel_err=" << fmt(e.rel_error) << '\n';
      out << report.summary() << '\n';
      return report.passed ? 0 : 1;
    }

    if (*insp) {
      if (insp_frames < 2) throw UsageError("--frames must be at least 2");
      const auto seqs = data::load_any(insp_data);
      if (insp_index >= seqs.size())
        throw UsageError("--index " + std::to_string(insp_index) + " out of range for " +
                         std::to_string(seqs.size()) + " samples");
      const auto x = data::normalize(seqs[insp_index], insp_frames).tensor;
      int n = 0;
      try {
        n = frequency::map_partition(insp_partition, insp_frames);
      } catch (const ContractError& e) {
        throw UsageError(e.what());
      }
      out << "joint_index,low_band_energy,high_band_energy,ratio\n";
      char buf[128];
      for (const auto& e : frequency::band_energy(x, n)) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", e.joint, e.low, e.high, e.ratio);
        out << buf;
      }
      return 0;
    }

    if (*cp) {
      const ModelConfig cfg = cp_knobs.model(cp_knobs.resolve());
      const ModelConfig v1 = cfg.v1_style();
      const std::size_t a = model::count_parameters(cfg), b = model::count_parameters(v1);
      const bool enumerated = model::flattened_size(model::init_params(cfg, cfg.seed)) == a &&
                              model::flattened_size(model::init_params(v1, v1.seed)) == b;
      out << "config=" << a << '\n'
          << "uniform_7fab_7sab_1tab=" << b << '\n'
          << "ratio=" << fmt(static_cast<double>(a) / static_cast<double>(b)) << '\n'
          << "enumeration_matches=" << (enumerated ? "yes" : "no") << '\n';
      return enumerated ? 0 : 1;
    }

    if (*ens) {
      if (!ens_weights.empty() && ens_weights.size() != ens_scores.size())
        throw UsageError("--weights needs one value per score file");
      if (ens_weights.empty()) ens_weights.assign(ens_scores.size(), 1.0);
      std::vector<Tensor> sets;
      std::vector<int> labels;
      for (std::size_t i = 0; i < ens_scores.size(); ++i) {
        Tensor s;
        std::vector<int> l;
        read_scores(ens_scores[i], s, l);
        if (i == 0)
          labels = l;
        else if (l != labels)
          throw FormatError("score file '" + ens_scores[i] + "' lists different labels");
        sets.push_back(s);
      }
      const auto fused = training::ensemble_fuse(sets, ens_weights);
      out << "samples=" << labels.size() << " accuracy=" << fmt(training::accuracy(fused.scores, labels)) << '\n';
      if (!ens_out.empty()) {
        std::ofstream po(ens_out);
        if (!po) throw std::runtime_error("cannot open '" + ens_out + "' for writing");
        for (int p : fused.predictions) po << p << '\n';
      }
      return 0;
    }

    if (*sw) {
      const auto values = sw_knobs.resolve();
      const ModelConfig base = sw_knobs.model(values);
      const auto tc = Knobs::train(values, base);
      omp_set_num_threads(tc.threads);
      if (sw_grid != "partition" && sw_grid != "operators") throw UsageError("--grid must be partition or operators");
      if (sw_values.empty())
        sw_values = sw_grid == "partition" ? "1,3,5,7,9,11,13,15,17"
                                           : "0.1:1.1,0.2:1.2,0.3:1.3,0.4:1.4,0.5:1.5,0.6:1.6,0.7:1.7,0.8:1.8,0.9:1.9";
      std::vector<ModelConfig> grid;
      std::vector<std::string> labels;
      for (const auto& v : split_list(sw_values)) {
        ModelConfig c = base;
        try {
          if (sw_grid == "partition") {
            c.set("partition", v);
            labels.push_back(v);
          } else {
            const auto pair = split_list(v, ':');
            if (pair.size() != 2) throw UsageError("operator values are ell:h pairs, got '" + v + "'");
            c.set("ell", pair[0]);
            c.set("h", pair[1]);
            labels.push_back(pair[0] + "," + pair[1]);
          }
          c.validate();
        } catch (const ContractError& e) {
          throw UsageError(e.what());
        }
        grid.push_back(c);
      }
      const auto splits = load_splits(sw_split, base);
      std::ostringstream table;
      table << (sw_grid == "partition" ? "N" : "ell,h") << ",test_acc,best_test_acc\n";
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto r = training::train_loop(splits.train, splits.test, grid[i],
                                            model::init_params(grid[i], grid[i].seed), tc);
        const double last = r.metrics.empty() ? 0.0 : r.metrics.back().test_acc;
        table << labels[i] << ',' << fmt(last) << ',' << fmt(r.best_test_acc) << '\n';
        out << labels[i] << ',' << fmt(last) << ',' << fmt(r.best_test_acc) << '\n' << std::flush;
      }
      if (!sw_out.empty()) {
        std::ofstream o(sw_out);
        if (!o) throw std::runtime_error("cannot open '" + sw_out + "' for writing");
        o << table.str();
      }
      return 0;
    }

    if (*dump) {
      const auto [cfg, params] = model::load_model(dump_ckpt);
      const auto seqs = data::load_any(dump_split.data);
      const data::Stream stream = dump_split.parsed_stream();
      fs::create_directories(dump_dir);
      std::size_t files = 0;
      for (const auto& s : split_list(dump_indices)) {
        const std::size_t idx = to_size("indices", s);
        if (idx >= seqs.size()) throw UsageError("sample index " + s + " out of range");
        const auto ds = training::make_dataset(seqs, {idx}, cfg.frames, stream);
        const auto trace = model::forward_trace(ds.inputs[0], params, cfg);
        auto emit = [&](const std::vector<Tensor>& maps, const char* kind) {
          for (std::size_t k = 0; k < maps.size(); ++k) {
            write_matrix(fs::path(dump_dir) / ("sample" + s + "_" + kind + std::to_string(k) + ".csv"), maps[k]);
            ++files;
          }
        };
        emit(trace.sab_maps, "sab");
        emit(trace.hfab_maps, "hfab");
        emit(trace.lfab_maps, "lfab");
        emit(trace.temporal_maps, "tab");
      }
      out << "wrote " << files << " matrices to " << dump_dir << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace fmv2::cli
