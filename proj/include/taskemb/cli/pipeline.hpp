#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "taskemb/benchmarks/metrics.hpp"
#include "taskemb/benchmarks/prediction.hpp"
#include "taskemb/benchmarks/predmodel.hpp"
#include "taskemb/benchmarks/selection.hpp"
#include "taskemb/cli/config.hpp"
#include "taskemb/cli/manifest.hpp"
#include "taskemb/embedding/embedding.hpp"
#include "taskemb/embedding/pca.hpp"
#include "taskemb/envs/task_io.hpp"
#include "taskemb/population/population.hpp"
#include "taskemb/similarity/similarity.hpp"

namespace taskemb {

struct PipelineOptions {
  bool force = false;
  std::size_t threads_override = 0;  // 0: use the config
  std::ostream* log = &std::cerr;
};

/// One input of a stage: a path (relative to the run directory unless
/// absolute) and the stage expected to have produced it ("" for external
/// files).
struct StageInput {
  std::string path;
  std::string upstream;
};

class Pipeline {
 public:
  Pipeline(RunConfig cfg, std::string config_path, PipelineOptions opt = {})
      : cfg_(std::move(cfg)), config_path_(std::move(config_path)), opt_(opt) {
    threads_ = opt_.threads_override ? opt_.threads_override : cfg_.threads ? cfg_.threads : default_threads();
  }

  static const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"train-population", "gen-constraints", "train-embedding",
                                                "train-predmodel",  "silhouette",      "eval-prediction",
                                                "eval-selection",   "dim-sweep",       "export-viz"};
    return names;
  }

  const std::string& out_dir() const { return cfg_.output_dir; }

  /// Runs one stage, or every stage in order for "run-all". Returns the
  /// stages that actually ran (cached ones are skipped).
  std::vector<std::string> run(const std::string& stage) {
    std::vector<std::string> ran;
    if (stage == "run-all") {
      for (const auto& s : stage_names())
        if (run_stage(s)) ran.push_back(s);
    } else if (run_stage(stage)) {
      ran.push_back(stage);
    }
    return ran;
  }

 private:
  RunConfig cfg_;
  std::string config_path_;
  PipelineOptions opt_;
  std::size_t threads_ = 1;
  Manifest manifest_;

  struct Stage {
    std::vector<std::string_view> config_parts;
    std::function<std::vector<StageInput>()> inputs;
    std::function<std::vector<std::string>()> body;  // returns output paths
  };

  std::ostream& log() { return *opt_.log; }

  std::string path(const std::string& rel) const {
    return std::filesystem::path(rel).is_absolute() ? rel : (std::filesystem::path(cfg_.output_dir) / rel).string();
  }

  std::uint64_t seed(std::uint64_t stage_seed_value) const { return stage_seed(cfg_, stage_seed_value); }

  std::string manifest_path() const { return path("manifest.txt"); }

  void load_manifest() {
    manifest_ = {};
    if (std::filesystem::exists(manifest_path())) manifest_ = read_manifest(read_file(manifest_path()));
  }

  void save_manifest() {
    manifest_.config_hash = hex64(fnv1a64(write_run_config(cfg_)));
    manifest_.config_path = config_path_;
    write_file(manifest_path(), write_manifest(manifest_));
  }

  std::string stage_config_hash(const std::string& name) const {
    return hex64(fnv1a64(name + "\n" + config_subset_for(stage(name).config_parts)));
  }

  std::string config_subset_for(const std::vector<std::string_view>& parts) const {
    std::string out;
    for (auto p : parts) out += config_subset(cfg_, {p});
    return out;
  }

  static std::string stage_hint(const std::string& upstream) { return "run the '" + upstream + "' stage first"; }

  /// All files of a directory produced by `upstream`.
  std::vector<StageInput> dir_inputs(const std::string& dir, const std::string& upstream) const {
    std::vector<StageInput> in;
    for (const auto& f : list_files(cfg_.output_dir, dir)) in.push_back({f, upstream});
    if (in.empty()) throw Error("missing upstream artifact '" + path(dir) + "'; " + stage_hint(upstream));
    return in;
  }

  bool predmodel_enabled() const { return cfg_.predmodel.enabled; }

  std::vector<StageInput> embedding_inputs() const {
    std::vector<StageInput> in{{"embedding/model.txt", "train-embedding"}};
    if (cfg_.training.wonorm) in.push_back({"embedding/wonorm_model.txt", "train-embedding"});
    if (predmodel_enabled()) in.push_back({"predmodel/model.txt", "train-predmodel"});
    return in;
  }

  std::vector<StageInput> constraint_inputs() const {
    std::vector<StageInput> in;
    for (const char* f : {"pool.csv", "split.csv", "train.csv", "val.csv", "test.csv"})
      in.push_back({std::string("constraints/") + f, "gen-constraints"});
    return in;
  }

  /// Population the prediction benchmark draws hidden agents from.
  std::vector<StageInput> agent_population_inputs() const {
    if (cfg_.prediction.agent_population.empty()) return dir_inputs("population", "train-population");
    const auto dir = std::filesystem::absolute(cfg_.prediction.agent_population);
    std::vector<StageInput> in;
    if (std::filesystem::is_directory(dir))
      for (const auto& f : list_files(dir.string(), "."))
        in.push_back({(dir / f).lexically_normal().generic_string(), ""});
    if (in.empty()) throw Error("[prediction] agent_population: no population found at '" + dir.string() + "'");
    return in;
  }

  Stage stage(const std::string& name) const {
    auto* self = const_cast<Pipeline*>(this);
    if (name == "train-population")
      return {{"run.env", "seeds.root", "seeds.population", "population"}, [] { return std::vector<StageInput>{}; },
              [self] { return self->train_population(); }};
    if (name == "gen-constraints")
      return {{"run.env", "seeds.root", "seeds.constraints", "constraints"},
              [this] { return dir_inputs("population", "train-population"); }, [self] { return self->gen_constraints_stage(); }};
    if (name == "train-embedding")
      return {{"run.env", "seeds.root", "seeds.training", "training"}, [this] { return constraint_inputs(); },
              [self] { return self->train_embedding_stage(); }};
    if (name == "train-predmodel")
      return {{"run.env", "seeds.root", "seeds.training", "predmodel"}, [] { return std::vector<StageInput>{}; },
              [self] { return self->train_predmodel_stage(); }};
    if (name == "silhouette")
      return {{"run.env", "seeds.root", "seeds.benchmarks", "silhouette", "training.dim", "training.wonorm",
               "predmodel.enabled"},
              [this] {
                auto in = dir_inputs("population", "train-population");
                for (auto& i : constraint_inputs())
                  if (i.path == "constraints/pool.csv" || i.path == "constraints/split.csv") in.push_back(i);
                for (auto& i : embedding_inputs()) in.push_back(i);
                return in;
              },
              [self] { return self->silhouette_stage(); }};
    if (name == "eval-prediction")
      return {{"run.env", "seeds.root", "seeds.benchmarks", "prediction", "training.wonorm", "predmodel.enabled"},
              [this] {
                auto in = agent_population_inputs();
                for (auto& i : embedding_inputs()) in.push_back(i);
                return in;
              },
              [self] { return self->eval_prediction_stage(); }};
    if (name == "eval-selection")
      return {{"run.env", "seeds.root", "seeds.benchmarks", "selection", "training.wonorm", "predmodel.enabled"},
              [this] {
                auto in = dir_inputs("population", "train-population");
                for (auto& i : embedding_inputs()) in.push_back(i);
                return in;
              },
              [self] { return self->eval_selection_stage(); }};
    if (name == "dim-sweep")
      return {{"run.env", "seeds.root", "seeds.training", "training", "dim_sweep"}, [this] { return constraint_inputs(); },
              [self] { return self->dim_sweep_stage(); }};
    if (name == "export-viz")
      return {{"run.env", "seeds.root", "seeds.benchmarks", "viz"},
              [] { return std::vector<StageInput>{{"embedding/model.txt", "train-embedding"}}; },
              [self] { return self->export_viz_stage(); }};
    std::string valid;
    for (const auto& s : stage_names()) valid += (valid.empty() ? "" : ", ") + s;
    throw ConfigError("unknown stage '" + name + "'; valid: " + valid + ", run-all");
  }

  /// Checks inputs against the manifest and returns their current hashes.
  std::vector<FileRecord> check_inputs(const std::string& name, const std::vector<StageInput>& inputs) {
    std::vector<FileRecord> recs;
    std::vector<std::string> problems;
    for (const auto& in : inputs) {
      const std::string full = path(in.path);
      if (!std::filesystem::exists(full)) {
        throw Error("stage '" + name + "' needs '" + full + "', which does not exist; " +
                    (in.upstream.empty() ? "check the config" : stage_hint(in.upstream)));
      }
      const FileRecord rec{in.path, hash_file(full)};
      recs.push_back(rec);
      if (in.upstream.empty()) continue;
      const StageRecord* up = manifest_.find(in.upstream);
      if (!up) {
        problems.push_back("'" + in.path + "' has no manifest record from '" + in.upstream + "'");
        continue;
      }
      auto it = std::find_if(up->outputs.begin(), up->outputs.end(), [&](const FileRecord& f) { return f.path == in.path; });
      if (it == up->outputs.end())
        problems.push_back("'" + in.path + "' was not produced by the recorded '" + in.upstream + "' run");
      else if (it->hash != rec.hash)
        problems.push_back("'" + in.path + "' changed after '" + in.upstream + "' wrote it (hash " + rec.hash +
                           ", recorded " + it->hash + ")");
      if (up->config_hash != stage_config_hash(in.upstream))
        problems.push_back("the config of '" + in.upstream + "' changed since it ran");
    }
    if (!problems.empty()) {
      std::sort(problems.begin(), problems.end());
      problems.erase(std::unique(problems.begin(), problems.end()), problems.end());
      std::string msg = "stage '" + name + "' refuses stale inputs:";
      for (const auto& p : problems) msg += "\n  - " + p;
      msg += "\nrerun the upstream stages, or pass --force to proceed anyway";
      if (!opt_.force) throw StaleError(msg);
      log() << "[" << name << "] warning (--force): " << msg << '\n';
    }
    return recs;
  }

  bool up_to_date(const std::string& name, const std::string& config_hash, const std::vector<FileRecord>& inputs) const {
    const StageRecord* rec = manifest_.find(name);
    if (!rec || rec->config_hash != config_hash || rec->inputs != inputs) return false;
    for (const auto& o : rec->outputs)
      if (!std::filesystem::exists(path(o.path)) || hash_file(path(o.path)) != o.hash) return false;
    return true;
  }

  bool run_stage(const std::string& name) {
    const Stage st = stage(name);
    std::filesystem::create_directories(cfg_.output_dir);
    load_manifest();
    write_file(path("config.conf"), write_run_config(cfg_));
    const std::string chash = stage_config_hash(name);
    const auto inputs = check_inputs(name, st.inputs());
    if (!opt_.force && up_to_date(name, chash, inputs)) {
      log() << "[" << name << "] up to date\n";
      save_manifest();
      return false;
    }
    log() << "[" << name << "] running (threads " << threads_ << ")\n";
    const auto t0 = std::chrono::steady_clock::now();
    const auto outputs = st.body();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    StageRecord rec{name, chash, secs, inputs, {}};
    for (const auto& o : outputs) rec.outputs.push_back({o, hash_file(path(o))});
    manifest_.put(std::move(rec));
    save_manifest();
    log() << "[" << name << "] done in " << brief(secs) << " s\n";
    return true;
  }

  // -------------------------------------------------------------------------
  // Artifact helpers

  std::string write_out(const std::string& rel, const std::string& content) {
    std::filesystem::create_directories(std::filesystem::path(path(rel)).parent_path());
    write_file(path(rel), content);
    return rel;
  }

  template <typename Fn>
  std::string write_stream(const std::string& rel, Fn&& fn) {
    std::ostringstream os;
    fn(os);
    return write_out(rel, os.str());
  }

  std::vector<Task> read_task_file(const std::string& rel) const {
    std::istringstream is(read_file(path(rel)));
    return read_tasks(is);
  }

  ConstraintSet read_constraint_file(const std::string& rel, std::size_t pool) const {
    std::istringstream is(read_file(path(rel)));
    return read_constraints(is, pool);
  }

  EmbeddingNet read_model(const std::string& rel) const {
    std::istringstream is(read_file(path(rel)));
    EmbeddingNet m = read_embedding(is);
    if (m.env != cfg_.env) throw Error("'" + rel + "' is for " + to_string(m.env) + ", config says " + to_string(cfg_.env));
    return m;
  }

  PredModel read_pred() const {
    std::istringstream is(read_file(path("predmodel/model.txt")));
    return read_predmodel(is);
  }

  Population read_population(const std::string& dir) const {
    Population p = load_population(dir);
    if (p.env != cfg_.env)
      throw Error("population at '" + dir + "' is for " + to_string(p.env) + ", config says " + to_string(cfg_.env));
    return p;
  }

  /// Rows of split.csv: 1 for training-split pool tasks.
  std::vector<char> read_split() const {
    std::istringstream is(read_file(path("constraints/split.csv")));
    std::string line;
    std::getline(is, line);
    std::vector<char> train;
    while (std::getline(is, line)) {
      if (trim(line).empty()) continue;
      const auto f = split(trim(line), ',');
      if (f.size() < 2 || (f[1] != "train" && f[1] != "heldout")) throw ParseError("split.csv: bad row '" + line + "'");
      train.push_back(f[1] == "train" ? 1 : 0);
    }
    return train;
  }

  struct Embedder {
    std::string name;
    std::function<std::vector<double>(const Task&)> fn;
  };

  /// Ours, OursWoNorm (when trained) and PredModel (when enabled).
  std::vector<Embedder> learned_embedders() const {
    std::vector<Embedder> e;
    auto ours = std::make_shared<EmbeddingNet>(read_model("embedding/model.txt"));
    e.push_back({"Ours", [ours](const Task& t) { return embed(*ours, t); }});
    if (cfg_.training.wonorm) {
      auto wo = std::make_shared<EmbeddingNet>(read_model("embedding/wonorm_model.txt"));
      e.push_back({"OursWoNorm", [wo](const Task& t) { return embed(*wo, t); }});
    }
    if (predmodel_enabled()) {
      auto pm = std::make_shared<PredModel>(read_pred());
      e.push_back({"PredModel", [pm](const Task& t) { return predmodel_embed(*pm, t); }});
    }
    return e;
  }

  static std::string fmt(double v) { return format_double(v); }

  /// Four significant digits, for progress messages.
  static std::string brief(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
  }

  // -------------------------------------------------------------------------
  // Stages

  std::vector<std::string> train_population() {
    const auto& p = cfg_.population;
    const Recipe recipe = make_recipe(cfg_.env, p.recipe, p.target_size);
    PopulationConfig pc;
    pc.bc.max_epochs = p.bc_max_epochs;
    pc.bc.patience = p.bc_patience;
    pc.bc.learning_rate = p.bc_learning_rate;
    pc.bc.expert_samples_per_epoch = p.bc_expert_samples;
    pc.bc.batch_size = p.bc_batch_size;
    pc.pg.max_epochs = p.pg_max_epochs;
    pc.pg.patience = p.pg_patience;
    pc.pg.learning_rate = p.pg_learning_rate;
    pc.pg.episodes_per_batch = p.pg_episodes_per_batch;
    pc.pg.batches_per_epoch = p.pg_batches_per_epoch;
    pc.pg.returns = p.pg_returns == "survival" ? ReturnMode::SurvivalFraction : ReturnMode::Binary;
    pc.snap_tasks = p.snap_tasks;
    pc.snap_rollouts = p.snap_rollouts;
    pc.delta_snap = p.delta_snap;
    pc.threads = threads_;
    const std::uint64_t s = seed(cfg_.seeds.population);
    const Population pop = build_population(cfg_.env, recipe, pc, s);
    log() << "[train-population] " << pop.size() << " agents from " << recipe.subpops.size() << " subpopulations\n";
    std::filesystem::remove_all(path("population"));
    save_population(pop, path("population"), p.recipe, s);
    return list_files(cfg_.output_dir, "population");
  }

  std::vector<std::string> gen_constraints_stage() {
    const auto& c = cfg_.constraints;
    const Population pop = read_population(path("population"));
    const std::uint64_t s = seed(cfg_.seeds.constraints);
    Rng rng(derive_seed(s, 1));
    std::vector<Task> pool;
    for (std::size_t i = 0; i < c.pool_size; ++i) pool.push_back(sample_task(cfg_.env, rng));
    const OutcomeTable table(pool, pop, c.reps_per_agent, derive_seed(s, 2), threads_);
    const auto n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(c.pool_size) * (1.0 - c.holdout_fraction)));
    if (n_train < 3) throw ConfigError("[constraints] training split holds fewer than 3 tasks");
    std::vector<std::size_t> eligible(n_train);
    for (std::size_t i = 0; i < n_train; ++i) eligible[i] = i;
    Rng crng(derive_seed(s, 3));
    const auto train = gen_constraints(table, {c.n_mi_train, c.n_norm_train}, crng, eligible, 0.0, c.pos_reps);
    const auto val = gen_constraints(table, {c.n_mi_val, c.n_norm_val}, crng, eligible, 0.0, c.pos_reps);
    const auto test = gen_constraints(table, {c.n_mi_test, c.n_norm_test}, crng, eligible, 0.0, c.pos_reps);
    std::vector<std::string> out;
    out.push_back(write_stream("constraints/pool.csv", [&](std::ostream& os) { write_tasks(os, pool); }));
    out.push_back(write_stream("constraints/split.csv", [&](std::ostream& os) {
      os << "task,split,pos\n";
      for (std::size_t i = 0; i < pool.size(); ++i)
        os << i << ',' << (i < n_train ? "train" : "heldout") << ',' << fmt(table.pos(i, static_cast<std::size_t>(c.pos_reps)))
           << '\n';
    }));
    out.push_back(write_stream("constraints/train.csv", [&](std::ostream& os) { write_constraints(os, train); }));
    out.push_back(write_stream("constraints/val.csv", [&](std::ostream& os) { write_constraints(os, val); }));
    out.push_back(write_stream("constraints/test.csv", [&](std::ostream& os) { write_constraints(os, test); }));
    return out;
  }

  struct ConstraintData {
    std::vector<Task> pool;
    ConstraintSet train, val, test;
  };

  ConstraintData read_constraint_data() const {
    ConstraintData d;
    d.pool = read_task_file("constraints/pool.csv");
    d.train = read_constraint_file("constraints/train.csv", d.pool.size());
    d.val = read_constraint_file("constraints/val.csv", d.pool.size());
    d.test = read_constraint_file("constraints/test.csv", d.pool.size());
    for (const Task& t : d.pool)
      if (t.env != cfg_.env) throw Error("constraints/pool.csv holds " + to_string(t.env) + " tasks");
    return d;
  }

  EmbeddingTrainConfig train_config(double lambda) const {
    EmbeddingTrainConfig tc;
    tc.lambda = lambda;
    tc.epochs = cfg_.training.epochs;
    tc.batch_size = cfg_.training.batch_size;
    tc.learning_rate = cfg_.training.learning_rate;
    tc.patience = cfg_.training.patience;
    return tc;
  }

  std::vector<std::string> train_embedding_stage() {
    const ConstraintData d = read_constraint_data();
    const std::uint64_t s = seed(cfg_.seeds.training);
    struct Variant {
      std::string name, prefix;
      double lambda;
      std::size_t dim;
      std::uint64_t tag;
    };
    std::vector<Variant> variants{{"Ours", "", cfg_.training.lambda,
                                   cfg_.training.dim ? cfg_.training.dim : default_embedding_dim(cfg_.env, true), 1}};
    if (cfg_.training.wonorm) variants.push_back({"OursWoNorm", "wonorm_", 0.0, default_embedding_dim(cfg_.env, false), 2});
    std::vector<std::string> out;
    std::ostringstream summary;
    summary << "variant,dim,lambda,epochs_run,best_epoch,initial_validation_loss,best_validation_loss,test_loss,"
               "test_triplet_loss,test_pair_loss,test_triplet_accuracy\n";
    for (const auto& v : variants) {
      Rng rng(derive_seed(s, v.tag));
      const auto res = train_embedding(cfg_.env, v.dim, d.pool, d.train, d.val, d.test, train_config(v.lambda), rng);
      const auto emb = embed_all(res.model, d.pool);
      const double acc = triplet_accuracy(emb, d.test.triplets);
      log() << "[train-embedding] " << v.name << ": " << res.log.size() << " epochs, best validation loss "
            << brief(res.best_validation_loss) << ", test triplet accuracy " << brief(acc) << '\n';
      out.push_back(write_stream("embedding/" + v.prefix + "model.txt", [&](std::ostream& os) { write_embedding(os, res.model); }));
      out.push_back(write_stream("embedding/" + v.prefix + "log.csv", [&](std::ostream& os) {
        os << "epoch,train_loss,validation_loss\n";
        for (const auto& l : res.log) os << l.epoch << ',' << fmt(l.train_loss) << ',' << fmt(l.validation_loss) << '\n';
      }));
      summary << v.name << ',' << v.dim << ',' << fmt(v.lambda) << ',' << res.log.size() << ',' << res.best_epoch << ','
              << fmt(res.initial_validation_loss) << ',' << fmt(res.best_validation_loss) << ',' << fmt(res.test_loss.total)
              << ',' << fmt(res.test_loss.triplet) << ',' << fmt(res.test_loss.pair) << ',' << fmt(acc) << '\n';
    }
    if (!cfg_.training.wonorm) {
      std::filesystem::remove(path("embedding/wonorm_model.txt"));
      std::filesystem::remove(path("embedding/wonorm_log.csv"));
    }
    out.push_back(write_out("embedding/summary.csv", summary.str()));
    return out;
  }

  std::vector<std::string> train_predmodel_stage() {
    if (!predmodel_enabled()) {
      log() << "[train-predmodel] disabled in config\n";
      return {};
    }
    const auto& p = cfg_.predmodel;
    const std::uint64_t s = seed(cfg_.seeds.training);
    Rng data_rng(derive_seed(s, 0x9D1));
    const TransitionData data = collect_transitions(cfg_.env, p.rollouts, data_rng);
    PredModelConfig pc;
    pc.latent_dim = p.latent_dim;
    pc.epochs = p.epochs;
    pc.batch_size = p.batch_size;
    pc.learning_rate = p.learning_rate;
    pc.alpha_r = p.alpha_r;
    pc.alpha_s = p.alpha_s;
    pc.beta_kl = p.beta_kl;
    Rng rng(derive_seed(s, 0x9D2));
    const auto res = train_predmodel(data, pc, rng);
    log() << "[train-predmodel] " << data.transitions.size() << " transitions, final loss "
          << brief(res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back()) << '\n';
    std::vector<std::string> out;
    out.push_back(write_stream("predmodel/model.txt", [&](std::ostream& os) { write_predmodel(os, res.model); }));
    out.push_back(write_stream("predmodel/log.csv", [&](std::ostream& os) {
      os << "epoch,loss\n";
      for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) os << e << ',' << fmt(res.epoch_loss[e]) << '\n';
    }));
    return out;
  }

  std::vector<std::string> silhouette_stage() {
    const auto& sc = cfg_.silhouette;
    const std::uint64_t s = seed(cfg_.seeds.benchmarks);
    const Population pop = read_population(path("population"));
    const auto pool = read_task_file("constraints/pool.csv");
    const auto in_train = read_split();
    if (in_train.size() != pool.size()) throw Error("constraints/split.csv does not match constraints/pool.csv");

    Rng rng(derive_seed(s, 0x51));
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < sc.eval_tasks; ++i) tasks.push_back(sample_task(cfg_.env, rng));
    std::vector<int> labels;
    for (const Task& t : tasks) labels.push_back(cluster_label(t));

    // 1 - PoS of the first spearman_tasks evaluation tasks.
    std::vector<double> difficulty(sc.spearman_tasks);
    parallel_for(sc.spearman_tasks, threads_, [&](std::size_t i) {
      Rng r(derive_seed(s, 0x52, i));
      difficulty[i] = 1.0 - estimate_pos(tasks[i], pop, sc.pos_reps, r);
    });

    std::vector<Task> train_tasks, held_tasks;
    std::vector<int> train_labels, held_labels;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      (in_train[i] ? train_tasks : held_tasks).push_back(pool[i]);
      (in_train[i] ? train_labels : held_labels).push_back(cluster_label(pool[i]));
    }

    std::ostringstream os;
    os << "method,metric,mean,stderr\n";
    auto row = [&](const std::string& method, const std::string& metric, double mean, const std::string& se) {
      os << method << ',' << metric << ',' << fmt(mean) << ',' << se << '\n';
      log() << "[silhouette] " << method << ' ' << metric << ' ' << brief(mean) << '\n';
    };
    auto embed_tasks = [](const Embedder& e, const std::vector<Task>& ts) {
      std::vector<std::vector<double>> out;
      for (const Task& t : ts) out.push_back(e.fn(t));
      return out;
    };
    std::size_t ours_dim = 0;
    for (const auto& e : learned_embedders()) {
      const auto emb = embed_tasks(e, tasks);
      if (e.name == "Ours") ours_dim = emb.front().size();
      row(e.name, "silhouette", silhouette(emb, labels), "");
      if (e.name == "PredModel") continue;
      if (!train_tasks.empty() && !held_tasks.empty()) {
        row(e.name, "silhouette_train_split", silhouette(embed_tasks(e, train_tasks), train_labels), "");
        row(e.name, "silhouette_heldout_split", silhouette(embed_tasks(e, held_tasks), held_labels), "");
      }
      if (sc.spearman_tasks >= 2) {
        std::vector<double> norms;
        for (std::size_t i = 0; i < sc.spearman_tasks; ++i) norms.push_back(norm2(emb[i]));
        row(e.name, "norm_spearman", spearman(norms, difficulty), "");
      }
    }
    std::vector<double> random_scores;
    for (std::size_t m = 0; m < sc.random_models; ++m) {
      Rng r(derive_seed(s, 0x53, m));
      const EmbeddingNet net = make_embedding_net(cfg_.env, ours_dim, r);
      random_scores.push_back(silhouette(embed_all(net, tasks), labels));
    }
    if (!random_scores.empty()) {
      const auto ms = mean_stderr(random_scores);
      row("RandomModel", "silhouette", ms.mean, fmt(ms.stderr_));
    }
    return {write_out("results/silhouette.csv", os.str())};
  }

  std::vector<std::string> eval_prediction_stage() {
    const auto& pc = cfg_.prediction;
    const std::uint64_t s = seed(cfg_.seeds.benchmarks);
    const std::string pop_dir =
        pc.agent_population.empty() ? path("population") : std::filesystem::absolute(pc.agent_population).string();
    const Population pop = read_population(pop_dir);
    const std::size_t qmax = pc.max_quiz_size;
    const auto data = gen_quiz_dataset(cfg_.env, pop, qmax, pc.examples, derive_seed(s, 0x61), threads_);
    const auto tune = gen_quiz_dataset(cfg_.env, pop, qmax, pc.tune_examples, derive_seed(s, 0x62), threads_);
    std::vector<std::string> out;
    out.push_back(write_stream("prediction/quiz.csv", [&](std::ostream& os) { write_quiz_dataset(os, data); }));
    out.push_back(write_stream("prediction/tune_quiz.csv", [&](std::ostream& os) { write_quiz_dataset(os, tune); }));

    std::ostringstream os;
    os << "method,quiz_size,accuracy,stderr,beta\n";
    for (const auto& e : learned_embedders()) {
      const auto emb = embed_dataset(data, e.fn);
      const auto emb_tune = embed_dataset(tune, e.fn);
      for (std::size_t q = 1; q <= qmax; ++q) {
        const double beta = tune_beta(tune, emb_tune, q);
        const auto ms = eval_prediction(softnn_correct(data, emb, q, beta));
        os << e.name << ',' << q << ',' << fmt(ms.mean) << ',' << fmt(ms.stderr_) << ',' << fmt(beta) << '\n';
        if (q == qmax) log() << "[eval-prediction] " << e.name << " quiz " << q << ": " << brief(ms.mean) << '\n';
      }
    }
    BaselineOracle oracle(cfg_.env, pop, derive_seed(s, 0x63));
    for (Baseline b : {Baseline::Random, Baseline::IgnoreTask, Baseline::IgnoreAgent, Baseline::Opt}) {
      const auto ms = eval_prediction(baseline_correct(b, data, oracle, threads_));
      for (std::size_t q = 1; q <= qmax; ++q)
        os << to_string(b) << ',' << q << ',' << fmt(ms.mean) << ',' << fmt(ms.stderr_) << ",\n";
      log() << "[eval-prediction] " << to_string(b) << ": " << brief(ms.mean) << '\n';
    }
    out.push_back(write_out("results/prediction.csv", os.str()));
    return out;
  }

  std::vector<std::string> eval_selection_stage() {
    const auto& sel = cfg_.selection;
    const std::uint64_t s = seed(cfg_.seeds.benchmarks);
    const Population pop = read_population(path("population"));
    SelectionConfig sc;
    sc.n_examples = sel.examples;
    sc.easy_pool = sel.easy_pool;
    sc.similarity_reps = sel.similarity_reps;
    sc.difficulty_reps = sel.difficulty_reps;
    sc.threads = threads_;
    std::vector<SelectionDataset> sets;
    for (std::size_t d = 0; d < sel.datasets; ++d) sets.push_back(gen_selection_dataset(cfg_.env, pop, sc, derive_seed(s, 0x71, d)));
    std::vector<std::string> out;
    out.push_back(write_stream("selection/datasets.csv", [&](std::ostream& os) { write_selection_datasets(os, sets); }));

    std::vector<std::pair<std::string, SelectionMethod>> methods;
    for (const auto& e : learned_embedders()) methods.push_back({e.name, embedding_method(e.fn)});
    methods.push_back({"StateSim", similarity_method(state_similarity)});
    methods.push_back({"TrajectorySim", similarity_method(trajectory_similarity)});
    // OPT and OPT50 read the same per-example outcome tables.
    auto tables = std::make_shared<std::map<std::pair<std::uint64_t, std::size_t>, std::shared_ptr<OutcomeTable>>>();
    const std::uint64_t oracle_seed = derive_seed(s, 0x72);
    auto oracle = [&pop, sc, tables, oracle_seed](std::vector<std::size_t> agents) -> SelectionMethod {
      return [&pop, sc, tables, oracle_seed, agents](const SelectionDataset& ds, std::size_t k) {
        const SelectionExample& ex = ds.examples[k];
        auto& slot = (*tables)[{ds.seed, k}];
        if (!slot) {
          std::vector<Task> ts{ex.ref};
          ts.insert(ts.end(), ex.options.begin(), ex.options.end());
          slot = std::make_shared<OutcomeTable>(ts, pop, sc.similarity_reps, derive_seed(oracle_seed, ds.seed, k), sc.threads);
        }
        const OutcomeTable& table = *slot;
        const std::vector<std::uint64_t> mask = agents.empty() ? std::vector<std::uint64_t>{} : table.agent_mask(agents);
        const double ref_pos = table.pos(0, sc.difficulty_reps, mask);
        SelectionScores sc_out;
        for (std::size_t o = 1; o < table.tasks(); ++o) {
          sc_out.similarity.push_back(table.mi(0, o, mask).value);
          sc_out.harder.push_back(table.pos(o, sc.difficulty_reps, mask) < ref_pos ? 1 : 0);
        }
        return sc_out;
      };
    };
    methods.push_back({"OPT", oracle({})});
    methods.push_back({"OPT50", oracle(half_population(pop.size(), derive_seed(s, 0x73)))});
    methods.push_back({"Random", random_method(derive_seed(s, 0x74))});

    std::ostringstream os;
    os << "method,metric,mean,stderr\n";
    for (const auto& [name, method] : methods) {
      std::vector<double> t1a, t1b, t2a, t2b;
      for (const auto& ds : sets) {
        const auto a = selection_accuracies(ds, method);
        t1a.push_back(a.type1_top1);
        t1b.push_back(a.type1_top3);
        t2a.push_back(a.type2_top1);
        t2b.push_back(a.type2_top3);
      }
      for (auto [metric, v] : {std::pair{"type1_top1", &t1a}, {"type1_top3", &t1b}, {"type2_top1", &t2a}, {"type2_top3", &t2b}}) {
        const auto ms = mean_stderr(*v);
        os << name << ',' << metric << ',' << fmt(ms.mean) << ',' << fmt(ms.stderr_) << '\n';
      }
      log() << "[eval-selection] " << name << " type1_top1 " << brief(mean_stderr(t1a).mean) << " type2_top1 "
            << brief(mean_stderr(t2a).mean) << '\n';
    }
    out.push_back(write_out("results/selection.csv", os.str()));
    return out;
  }

  std::vector<std::string> dim_sweep_stage() {
    const ConstraintData d = read_constraint_data();
    const std::uint64_t s = seed(cfg_.seeds.training);
    const std::size_t lo = cfg_.dim_sweep.min_dim, n = cfg_.dim_sweep.max_dim - lo + 1;
    std::vector<double> loss(n), acc(n);
    parallel_for(n, threads_, [&](std::size_t i) {
      Rng rng(derive_seed(s, 0xD1, lo + i));
      const auto res = train_embedding(cfg_.env, lo + i, d.pool, d.train, d.val, d.test, train_config(cfg_.training.lambda), rng);
      loss[i] = res.test_loss.total;
      acc[i] = triplet_accuracy(embed_all(res.model, d.pool), d.test.triplets);
    });
    std::ostringstream os;
    os << "dim,test_loss,test_triplet_accuracy\n";
    for (std::size_t i = 0; i < n; ++i) os << lo + i << ',' << fmt(loss[i]) << ',' << fmt(acc[i]) << '\n';
    return {write_out("results/dim_sweep.csv", os.str())};
  }

  std::vector<std::string> export_viz_stage() {
    const std::uint64_t s = seed(cfg_.seeds.benchmarks);
    const EmbeddingNet model = read_model("embedding/model.txt");
    Rng rng(derive_seed(s, 0x81));
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < cfg_.viz.tasks; ++i) tasks.push_back(sample_task(cfg_.env, rng));
    const auto emb = embed_all(model, tasks);
    const std::size_t k = std::min<std::size_t>(2, model.dim);
    const PcaResult pca = pca_project(emb, k);
    std::vector<std::string> out;
    out.push_back(write_stream("viz/tasks.csv", [&](std::ostream& os) { write_tasks(os, tasks); }));
    out.push_back(write_stream("viz/embeddings.csv", [&](std::ostream& os) { write_embedding_csv(os, emb); }));
    out.push_back(write_stream("viz/pca.csv", [&](std::ostream& os) {
      os << "task_index";
      for (std::size_t c = 1; c <= k; ++c) os << ",pc" << c;
      os << ",label\n";
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        os << t;
        for (double v : pca.projected[t]) os << ',' << fmt(v);
        os << ',' << cluster_label(tasks[t]) << '\n';
      }
    }));
    out.push_back(write_stream("viz/pca_variance.csv", [&](std::ostream& os) {
      os << "component,explained_variance_ratio\n";
      for (std::size_t c = 0; c < pca.explained_variance_ratio.size(); ++c)
        os << c + 1 << ',' << fmt(pca.explained_variance_ratio[c]) << '\n';
    }));
    return out;
  }
};

}  // namespace taskemb
