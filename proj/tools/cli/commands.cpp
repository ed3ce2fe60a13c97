#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "fuxi/checkpoint.hpp"
#include "fuxi/corpus.hpp"
#include "fuxi/errors.hpp"
#include "fuxi/profiler.hpp"
#include "fuxi/random.hpp"
#include "fuxi/repr.hpp"
#include "fuxi/reports.hpp"
#include "fuxi/tokenizer.hpp"
#include "fuxi/training.hpp"
#include "json.hpp"

namespace fuxi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

json model_defaults() {
  const ModelConfig m;
  return {{"n_layers", m.n_layers}, {"d_model", m.d_model},         {"n_heads", m.n_heads},
          {"d_ff", m.d_ff},         {"vocab_size", 0},              {"context_len", m.context_len},
          {"rope_theta", m.rope_theta}, {"norm_eps", m.norm_eps}};
}

json train_defaults() {
  const TrainConfig t;
  return {{"max_lr", t.max_lr},
          {"min_lr_ratio", t.min_lr_ratio},
          {"warmup_fraction", t.warmup_fraction},
          {"total_steps", t.total_steps},
          {"batch_size", t.batch_size},
          {"weight_decay", t.weight_decay},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"grad_clip", t.grad_clip},
          {"checkpoint_every", t.checkpoint_every}};
}

json defaults_for(const std::string& command) {
  json base = {{"seed", 0}, {"out", ""}, {"workers", 1}};
  if (command == "tokenizer-train") {
    base.update({{"corpus", ""}, {"merges", 4000}});
  } else if (command == "tokenizer-fertility") {
    base.update({{"corpus", ""}, {"tokenizer", ""}});
  } else if (command == "train") {
    base.update({{"corpus", ""}, {"tokenizer", ""}, {"resume", ""}, {"model", model_defaults()}, {"train", train_defaults()}});
  } else if (command == "profile-neurons") {
    base.update({{"checkpoint", ""},
                 {"tokenizer", ""},
                 {"parallel", ""},
                 {"languages", json::array()},
                 {"method", "first_order"},
                 {"abs_convention", "after_position_sum"},
                 {"max_sentences", 0},
                 {"validate_sample", 500},
                 {"validate_sentences", 8}});
  } else if (command == "analyze-repr") {
    base.update({{"checkpoint", ""}, {"tokenizer", ""}, {"parallel", ""}, {"order", json::array()}, {"max_sentences", 0}});
  } else {
    throw UsageError("unknown command '" + command + "'");
  }
  return base;
}

// Recursively overlays `patch` on `base`; keys must already exist and keep
// their JSON kind.
void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("configuration" + where + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown configuration key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
    } else if (slot.is_number() ? !value.is_number() : slot.type() != value.type()) {
      throw ConfigError("configuration key '" + path + "' has the wrong type");
    } else {
      slot = value;
    }
  }
}

void apply_assignment(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t p; (p = rest.find('.')) != std::string::npos; rest = rest.substr(p + 1)) parts.push_back(rest.substr(0, p));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  overlay(cfg, patch, "");
}

std::uint64_t u64(const json& cfg, const char* key) {
  const auto& v = cfg.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ConfigError(std::string("configuration key '") + key + "' must be a nonnegative integer");
  }
  return v.get<std::uint64_t>();
}

fs::path required_input(const json& cfg, const char* key) {
  const std::string p = cfg.at(key).get<std::string>();
  if (p.empty()) throw UsageError(std::string("missing required input '") + key + "'");
  if (!fs::exists(p)) throw UsageError(std::string(key) + " path does not exist: " + p);
  return p;
}

ModelConfig model_config_from(const json& m, std::size_t tokenizer_vocab) {
  ModelConfig c;
  c.n_layers = m.at("n_layers").get<std::size_t>();
  c.d_model = m.at("d_model").get<std::size_t>();
  c.n_heads = m.at("n_heads").get<std::size_t>();
  c.d_ff = m.at("d_ff").get<std::size_t>();
  c.vocab_size = m.at("vocab_size").get<std::size_t>();
  if (c.vocab_size == 0) c.vocab_size = tokenizer_vocab;
  c.context_len = m.at("context_len").get<std::size_t>();
  c.rope_theta = m.at("rope_theta").get<double>();
  c.norm_eps = m.at("norm_eps").get<double>();
  c.validate();
  return c;
}

TrainConfig train_config_from(const json& t, std::uint64_t seed) {
  TrainConfig c;
  c.max_lr = t.at("max_lr").get<double>();
  c.min_lr_ratio = t.at("min_lr_ratio").get<double>();
  c.warmup_fraction = t.at("warmup_fraction").get<double>();
  c.total_steps = t.at("total_steps").get<std::size_t>();
  c.batch_size = t.at("batch_size").get<std::size_t>();
  c.weight_decay = t.at("weight_decay").get<double>();
  c.beta1 = t.at("beta1").get<double>();
  c.beta2 = t.at("beta2").get<double>();
  c.eps = t.at("eps").get<double>();
  c.grad_clip = t.at("grad_clip").get<double>();
  c.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();
  c.seed = seed;
  c.validate();
  return c;
}

bool is_tsv(const fs::path& p) {
  return p.extension() == ".tsv";
}

std::vector<TaggedText> tagged_texts(const fs::path& corpus) {
  std::vector<TaggedText> out;
  if (is_tsv(corpus)) {
    const auto pc = load_parallel(corpus);
    for (std::size_t c = 0; c < pc.languages.size(); ++c) {
      for (const auto& row : pc.rows) out.push_back({pc.languages[c], row[c]});
    }
  } else {
    for (auto& d : load_documents(corpus)) out.push_back({d.lang, std::move(d.text)});
  }
  if (out.empty()) throw InputError("corpus " + corpus.string() + " is empty");
  return out;
}

Tokenizer load_compatible_tokenizer(const fs::path& path, const ModelConfig& cfg) {
  auto tok = Tokenizer::load(path);
  if (tok.vocab_size() > cfg.vocab_size) {
    throw SchemaError("tokenizer vocabulary (" + std::to_string(tok.vocab_size()) +
                      ") does not fit the checkpoint's vocab_size (" + std::to_string(cfg.vocab_size) + ")");
  }
  return tok;
}

std::vector<std::string> string_list(const json& v) {
  return v.get<std::vector<std::string>>();
}

struct Context {
  std::string command;
  json cfg;
  fs::path out;
  bool validate = false;
  std::ostream& log;
};

void cmd_tokenizer_train(Context& ctx, const fs::path& dir) {
  const auto corpus = required_input(ctx.cfg, "corpus");
  std::vector<std::string> texts;
  for (auto& t : tagged_texts(corpus)) texts.push_back(std::move(t.text));
  const auto tok = train_bbpe(texts, u64(ctx.cfg, "merges"));
  write_file_atomic(dir / "tokenizer.txt", tok.serialize());
  ctx.log << "tokenizer: " << tok.merge_count() << " merges, vocab " << tok.vocab_size() << "\n";
}

void cmd_tokenizer_fertility(Context& ctx, const fs::path& dir) {
  const auto tok_path = required_input(ctx.cfg, "tokenizer");
  const auto corpus = required_input(ctx.cfg, "corpus");
  const auto tok = Tokenizer::load(tok_path);
  const auto report = fertility(tok, tagged_texts(corpus));
  write_file_atomic(dir / "fertility.csv", fertility_csv(report));
  for (const auto& lang : report.order) {
    const auto& f = report.languages.at(lang);
    ctx.log << lang << ' ' << (f.fertility ? format_double(*f.fertility) : std::string("undefined")) << '\n';
  }
}

void cmd_train(Context& ctx, const fs::path& dir) {
  const auto corpus_path = required_input(ctx.cfg, "corpus");
  const auto tok_path = required_input(ctx.cfg, "tokenizer");
  std::optional<fs::path> resume_path;
  if (!ctx.cfg.at("resume").get<std::string>().empty()) resume_path = required_input(ctx.cfg, "resume");

  const auto tok = Tokenizer::load(tok_path);
  const auto docs = load_documents(corpus_path);
  const ModelConfig model_cfg = model_config_from(ctx.cfg.at("model"), tok.vocab_size());
  const TrainConfig train_cfg = train_config_from(ctx.cfg.at("train"), u64(ctx.cfg, "seed"));

  TrainOptions opts;
  opts.out_dir = dir;
  opts.workers = u64(ctx.cfg, "workers");
  if (resume_path) {
    opts.resume = load_checkpoint(*resume_path);
    if (!(opts.resume->config == model_cfg)) throw SchemaError("resume checkpoint was trained with another model config");
    ctx.log << "resuming at step " << opts.resume->step << "\n";
  }
  fs::create_directories(dir);
  write_file_atomic(dir / "tokenizer.txt", tok.serialize());
  const auto res = train(model_cfg, train_cfg, docs, tok, opts);
  if (!res.metrics.empty()) {
    const auto& last = res.metrics.back();
    ctx.log << "step " << last.step << " loss " << format_double(last.loss) << "\n";
  }
  ctx.log << "final checkpoint: " << (dir / "checkpoints" / "final").string() << "\n";
}

struct LoadedAnalysis {
  Checkpoint ckpt;
  Tokenizer tok;
  ParallelCorpus corpus;
};

LoadedAnalysis load_analysis_inputs(const json& cfg, const std::vector<std::string>& languages) {
  const auto ckpt_path = required_input(cfg, "checkpoint");
  const auto tok_path = required_input(cfg, "tokenizer");
  const auto par_path = required_input(cfg, "parallel");
  auto ckpt = load_checkpoint(ckpt_path);
  auto tok = load_compatible_tokenizer(tok_path, ckpt.config);
  auto corpus = load_parallel(par_path, languages);
  if (corpus.rows.empty()) throw InputError("parallel corpus has no rows");
  return {std::move(ckpt), std::move(tok), std::move(corpus)};
}

void cmd_profile_neurons(Context& ctx, const fs::path& dir) {
  const auto in = load_analysis_inputs(ctx.cfg, string_list(ctx.cfg.at("languages")));
  ProfileOptions opts;
  const auto method = ctx.cfg.at("method").get<std::string>();
  if (method == "first_order") {
    opts.method = ImportanceMethod::FirstOrder;
  } else if (method == "exact") {
    opts.method = ImportanceMethod::Exact;
  } else {
    throw ConfigError("method must be first_order or exact");
  }
  const auto conv = ctx.cfg.at("abs_convention").get<std::string>();
  if (conv == "after_position_sum") {
    opts.convention = AbsConvention::AfterPositionSum;
  } else if (conv == "per_position") {
    opts.convention = AbsConvention::PerPosition;
  } else {
    throw ConfigError("abs_convention must be after_position_sum or per_position");
  }
  opts.workers = u64(ctx.cfg, "workers");

  const LanguageModel model(in.ckpt.config, in.ckpt.params);
  const ModelSubject subject(model);
  const auto sentences = tokenize_parallel(in.corpus, in.tok, in.ckpt.config.context_len, u64(ctx.cfg, "max_sentences"));
  const auto maps = profile_languages(subject, sentences, opts);

  fs::create_directories(dir / "importance");
  for (const auto& m : maps) write_file_atomic(dir / "importance" / (m.lang + ".csv"), importance_csv(m));
  write_file_atomic(dir / "layer_importance.csv", layer_importance_csv(maps));
  const std::map<std::string, std::string> meta = {
      {"checkpoint_step", std::to_string(in.ckpt.step)},
      {"method", std::string(method_name(opts.method))},
      {"abs_convention", std::string(convention_name(opts.convention))},
      {"columns", "layer," + [] {
         std::string s;
         for (const auto& c : importance_columns()) s += (s.empty() ? "" : ",") + c;
         return s;
       }()}};
  write_file_atomic(dir / "importance.json", importance_json(maps, meta));
  ctx.log << "profiled " << maps.size() << " languages over " << subject.layout().total() << " neurons\n";

  if (ctx.validate) {
    const std::size_t per_lang = u64(ctx.cfg, "validate_sentences");
    std::vector<std::vector<TokenId>> pool;
    for (std::size_t r = 0; r < per_lang; ++r) {
      for (const auto& ls : sentences) {
        if (r < ls.sentences.size()) pool.push_back(ls.sentences[r]);
      }
    }
    const auto rv = validate_rank_agreement(subject, pool, u64(ctx.cfg, "validate_sample"),
                                            derive_seed(u64(ctx.cfg, "seed"), "validate"), opts.workers);
    json report = {{"sample_size", rv.sample.size()},
                   {"sentences", pool.size()},
                   {"defined", rv.defined},
                   {"spearman", rv.defined ? json(rv.spearman) : json(nullptr)}};
    json neurons = json::array();
    for (std::size_t i = 0; i < rv.sample.size(); ++i) {
      neurons.push_back({{"layer", rv.sample[i].layer},
                         {"component", component_name(rv.sample[i].component)},
                         {"channel", rv.sample[i].channel},
                         {"exact", rv.exact[i]},
                         {"first_order", rv.first_order[i]}});
    }
    report["neurons"] = std::move(neurons);
    write_file_atomic(dir / "validation.json", report.dump(2) + "\n");
    if (rv.defined) {
      ctx.log << "spearman " << format_double(rv.spearman) << " over " << rv.sample.size() << " neurons\n";
      if (rv.spearman < 0.5) ctx.log << "warning: rank agreement below 0.5\n";
    } else {
      ctx.log << "spearman undefined (constant ranks)\n";
    }
  }
}

void cmd_analyze_repr(Context& ctx, const fs::path& dir) {
  const auto in = load_analysis_inputs(ctx.cfg, {});
  const LanguageModel model(in.ckpt.config, in.ckpt.params);
  ReprOptions opts;
  opts.order = string_list(ctx.cfg.at("order"));
  opts.max_sentences = u64(ctx.cfg, "max_sentences");
  opts.workers = u64(ctx.cfg, "workers");
  const auto prof = similarity_profile(model, in.tok, in.corpus, opts);

  fs::create_directories(dir / "similarity");
  for (const auto& m : prof.matrices) write_file_atomic(dir / "similarity" / (m.layer + ".csv"), similarity_csv(m));
  write_file_atomic(dir / "layer_profile.csv", layer_profile_csv(prof));
  const std::size_t mid = middle_layer_label(in.ckpt.config);
  ctx.log << "mid layer " << prof.labels[mid] << " mean similarity " << format_double(prof.mean_off_diagonal[mid])
          << "\n";
}

const std::map<std::string, std::function<void(Context&, const fs::path&)>>& commands() {
  static const std::map<std::string, std::function<void(Context&, const fs::path&)>> table = {
      {"tokenizer-train", cmd_tokenizer_train},
      {"tokenizer-fertility", cmd_tokenizer_fertility},
      {"train", cmd_train},
      {"profile-neurons", cmd_profile_neurons},
      {"analyze-repr", cmd_analyze_repr},
  };
  return table;
}

bool non_empty_dir(const fs::path& p) {
  return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p));
}

}  // namespace

std::string default_config(const std::string& command) {
  return defaults_for(command).dump(2);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fuxi: multilingual toy language model toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> workers;
    bool validate = false;
    bool force = false;
    bool print_defaults = false;
    std::vector<std::string> sets;
    std::map<std::string, std::string> paths;
  } flags;

  for (const auto& [name, fn] : commands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", flags.config, "JSON configuration file");
    sub->add_option("--seed", flags.seed, "Random seed");
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--workers", flags.workers, "Worker threads (results do not depend on it)");
    sub->add_flag("--force", flags.force, "Replace a non-empty output directory");
    sub->add_option("--set", flags.sets, "Override a configuration key: key.path=value");
    sub->add_flag("--print-defaults", flags.print_defaults, "Print the default configuration and exit");
    if (name == "profile-neurons") sub->add_flag("--validate", flags.validate, "Exact-vs-first-order rank check");
    const json defaults = defaults_for(name);
    for (const auto& [key, value] : defaults.items()) {
      if (!value.is_string() || key == "out") continue;
      sub->add_option_function<std::string>("--" + key, [&flags, key](const std::string& v) { flags.paths[key] = v; },
                                            "Path for '" + key + "'");
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  if (flags.print_defaults) {
    out << default_config(command) << "\n";
    return kExitOk;
  }

  fs::path staging;
  bool staged = false;
  try {
    json cfg = defaults_for(command);
    if (!flags.config.empty()) {
      if (!fs::exists(flags.config)) throw UsageError("config file does not exist: " + flags.config);
      json file = json::parse(read_file(flags.config), nullptr, false);
      if (file.is_discarded()) throw ConfigError("config file is not valid JSON: " + flags.config);
      overlay(cfg, file, "");
    }
    for (const auto& s : flags.sets) apply_assignment(cfg, s);
    for (const auto& [k, v] : flags.paths) cfg[k] = v;
    if (flags.seed) cfg["seed"] = *flags.seed;
    if (!flags.out.empty()) cfg["out"] = flags.out;
    if (flags.workers) cfg["workers"] = *flags.workers;
    if (u64(cfg, "workers") == 0) throw ConfigError("workers must be at least 1");

    const fs::path out_dir = cfg.at("out").get<std::string>();
    if (out_dir.empty()) throw UsageError("an output directory is required (--out)");
    if (non_empty_dir(out_dir) && !flags.force) {
      throw UsageError("output directory " + out_dir.string() + " is not empty; pass --force to replace it");
    }

    Context ctx{command, cfg, out_dir, flags.validate, out};
    json provenance = {{"command", command}, {"config", cfg}};
    if (command == "profile-neurons") provenance["validate"] = flags.validate;

    if (command == "train") {
      // Training writes in place; earlier checkpoints survive a divergence abort.
      required_input(cfg, "corpus");
      required_input(cfg, "tokenizer");
      const auto resume = cfg.at("resume").get<std::string>();
      if (!resume.empty()) required_input(cfg, "resume");
      if (flags.force && fs::exists(out_dir)) {
        if (!resume.empty() &&
            fs::weakly_canonical(resume).string().starts_with(fs::weakly_canonical(out_dir).string())) {
          throw UsageError("cannot --force over the directory holding the resume checkpoint");
        }
        fs::remove_all(out_dir);
      }
      fs::create_directories(out_dir);
      write_file_atomic(out_dir / "run_config.json", provenance.dump(2) + "\n");
      commands().at(command)(ctx, out_dir);
    } else {
      staging = out_dir;
      staging += ".partial";
      fs::remove_all(staging);
      staged = true;
      // Inputs are checked inside the command before anything is written.
      fs::create_directories(staging);
      commands().at(command)(ctx, staging);
      write_file_atomic(staging / "run_config.json", provenance.dump(2) + "\n");
      if (fs::exists(out_dir)) fs::remove_all(out_dir);
      if (out_dir.has_parent_path()) fs::create_directories(out_dir.parent_path());
      fs::rename(staging, out_dir);
      staged = false;
    }
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    if (staged) fs::remove_all(staging);
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    if (staged) fs::remove_all(staging);
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << "\n";
    if (staged) fs::remove_all(staging);
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    if (staged) fs::remove_all(staging);
    return kExitFailure;
  }
}

}  // namespace fuxi::cli
