// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "medos/annotate.hpp"
#include "medos/checkpoint.hpp"
#include "medos/corpus.hpp"
#include "medos/embed.hpp"
#include "medos/error.hpp"
#include "medos/eval.hpp"
#include "medos/generate.hpp"
#include "medos/model.hpp"
#include "medos/sdc.hpp"
#include "medos/text.hpp"
#include "medos/tokenizer.hpp"
#include "medos/train.hpp"

namespace medos::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json defaults() {
  const auto desk = train::TrainConfig::desk();
  return json{
      {"seed", 0},
      {"out_dir", "medos-out"},
      {"embed",
       {{"embedder", "fallback"},
        {"checkpoint", "all-MiniLM-L12-v2"},
        {"dimension", 384},
        {"precomputed", ""},
        {"endpoint", ""}}},
      {"sdc", {{"k", 8}, {"percentile", 85.0}, {"lambda1", 0.5}, {"lambda2", 0.5}, {"m_cap", 10}, {"mode", "full"}}},
      {"model",
       {{"arch", "medos"},
        {"d_model", 32},
        {"num_layers", 2},
        {"num_heads", 4},
        {"ffn_dim", 0},
        {"max_review_len", 256},
        {"max_description_len", 64},
        {"max_qa_len", 128},
        {"max_target_len", 128},
        {"dropout", 0.0},
        {"tie_embeddings", true},
        {"min_count", 1},
        {"max_vocab", 0}}},
      {"train",
       {{"learning_rate", desk.learning_rate},
        {"batch_size", desk.batch_size},
        {"epochs", desk.epochs},
        {"max_steps", 0},
        {"weight_decay", desk.weight_decay},
        {"grad_clip", nullptr},
        {"dev_fraction", desk.dev_fraction},
        {"eval_every", 0},
        {"adam_eps", desk.adam_eps}}},
      {"generate",
       {{"beam_size", 5}, {"no_repeat_ngram", 3}, {"max_length", 100}, {"min_length", 0}, {"length_penalty", 0.0}}},
      {"eval", {{"metrics", "r1,r2,rl"}, {"multi_ref", "max"}, {"reference", "gold"}}},
      {"annotate",
       {{"kind", "gpt-rdq"},
        {"transport", "stub"},
        {"fixtures", ""},
        {"endpoint", ""},
        {"model", ""},
        {"max_retries", 3},
        {"rate_limit_per_minute", 0.0},
        {"max_in_flight", 2},
        {"timeout_ms", 60000},
        {"backoff_ms", 1000}}},
      {"pipeline", {{"stages", json::array()}, {"train_input", ""}, {"test_input", ""}, {"quadruplets", ""},
                    {"checkpoint", ""}}},
  };
}

bool compatible(const json& slot, const json& v) {
  if (slot.is_null()) return v.is_null() || v.is_number();
  if (slot.is_number_integer()) return v.is_number_integer();
  if (slot.is_number()) return v.is_number();
  return slot.type() == v.type();
}

void merge(json& base, const json& over, const std::string& where) {
  if (!over.is_object()) throw UsageError("config: '" + (where.empty() ? "<root>" : where) + "' must be an object");
  for (const auto& [k, v] : over.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    if (!base.contains(k)) throw UsageError("config: unknown key '" + path + "'");
    json& slot = base[k];
    if (slot.is_object()) {
      merge(slot, v, path);
    } else {
      if (!compatible(slot, v)) throw UsageError("config: '" + path + "' has the wrong type");
      slot = v;
    }
  }
}

json& at_path(json& j, const std::string& dotted) {
  json* cur = &j;
  std::stringstream ss(dotted);
  for (std::string part; std::getline(ss, part, '.');) cur = &(*cur)[part];
  return *cur;
}

// Relative paths written in a config file are taken relative to that file.
void resolve_paths(json& cfg, const json& file, const fs::path& base) {
  static const char* kPathKeys[] = {"pipeline.train_input", "pipeline.test_input", "pipeline.quadruplets",
                                    "pipeline.checkpoint", "annotate.fixtures", "embed.precomputed"};
  for (const char* key : kPathKeys) {
    const std::string k(key);
    const auto dot = k.find('.');
    const std::string sec = k.substr(0, dot), name = k.substr(dot + 1);
    if (!file.contains(sec) || !file.at(sec).contains(name)) continue;
    json& slot = at_path(cfg, k);
    const fs::path p = slot.get<std::string>();
    if (!p.empty() && p.is_relative()) slot = (base / p).lexically_normal().string();
  }
}

// Flags are optional so that only the ones given override the config file.
struct Overrides {
  std::vector<std::function<void(json&)>> apply;

  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto holder = std::make_shared<std::optional<T>>();
    apply.push_back([holder, key](json& cfg) {
      if (*holder) at_path(cfg, key) = **holder;
    });
    return app->add_option(flag, *holder, help);
  }
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

std::string hash_or_empty(const std::string& path) {
  std::error_code ec;
  if (path.empty() || !fs::is_regular_file(path, ec)) return "";
  return text::file_hash(path);
}

json hashes(const std::map<std::string, std::string>& paths) {
  json j = json::object();
  for (const auto& [role, path] : paths) j[role] = {{"path", path}, {"hash", hash_or_empty(path)}};
  return j;
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string& path, const std::string& contents) {
  ensure_parent(path);
  text::write_file_atomic(path, contents);
}

// ---------------------------------------------------------------- config views

embed::EmbeddingProviderConfig embed_config(const json& c) {
  const auto& e = c.at("embed");
  embed::EmbeddingProviderConfig cfg;
  cfg.kind = embed::parse_provider_kind(e.at("embedder").get<std::string>());
  cfg.checkpoint_name = e.at("checkpoint").get<std::string>();
  cfg.dimension = e.at("dimension").get<std::size_t>();
  cfg.precomputed_path = e.at("precomputed").get<std::string>();
  cfg.endpoint = e.at("endpoint").get<std::string>();
  cfg.validate();
  return cfg;
}

SdcHyperparams sdc_params(const json& c) {
  const auto& s = c.at("sdc");
  SdcHyperparams hp;
  hp.k = s.at("k").get<std::size_t>();
  hp.percentile = s.at("percentile").get<double>();
  hp.lambda1 = s.at("lambda1").get<double>();
  hp.lambda2 = s.at("lambda2").get<double>();
  hp.m_cap = s.at("m_cap").get<std::size_t>();
  hp.validate();
  return hp;
}

model::ModelConfig model_config(const json& c, std::size_t vocab) {
  const auto& m = c.at("model");
  model::ModelConfig cfg;
  cfg.arch = model::parse_arch(m.at("arch").get<std::string>());
  cfg.vocab_size = vocab;
  cfg.d_model = m.at("d_model").get<std::size_t>();
  cfg.num_layers = m.at("num_layers").get<std::size_t>();
  cfg.num_heads = m.at("num_heads").get<std::size_t>();
  cfg.ffn_dim = m.at("ffn_dim").get<std::size_t>();
  cfg.max_review_len = m.at("max_review_len").get<std::size_t>();
  cfg.max_description_len = m.at("max_description_len").get<std::size_t>();
  cfg.max_qa_len = m.at("max_qa_len").get<std::size_t>();
  cfg.max_target_len = m.at("max_target_len").get<std::size_t>();
  cfg.dropout = m.at("dropout").get<double>();
  cfg.tie_embeddings = m.at("tie_embeddings").get<bool>();
  return cfg;
}

train::TrainConfig train_config(const json& c) {
  const auto& t = c.at("train");
  train::TrainConfig cfg = train::TrainConfig::desk();
  cfg.learning_rate = t.at("learning_rate").get<double>();
  cfg.batch_size = t.at("batch_size").get<std::size_t>();
  cfg.epochs = t.at("epochs").get<std::size_t>();
  cfg.max_steps = t.at("max_steps").get<std::size_t>();
  cfg.weight_decay = t.at("weight_decay").get<double>();
  if (!t.at("grad_clip").is_null()) cfg.grad_clip = t.at("grad_clip").get<double>();
  cfg.dev_fraction = t.at("dev_fraction").get<double>();
  cfg.eval_every = t.at("eval_every").get<std::size_t>();
  cfg.adam_eps = t.at("adam_eps").get<double>();
  cfg.seed = c.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

gen::GenerationConfig gen_config(const json& c) {
  const auto& g = c.at("generate");
  gen::GenerationConfig cfg;
  cfg.beam_size = g.at("beam_size").get<std::size_t>();
  cfg.no_repeat_ngram = g.at("no_repeat_ngram").get<std::size_t>();
  cfg.max_length = g.at("max_length").get<std::size_t>();
  cfg.min_length = g.at("min_length").get<std::size_t>();
  cfg.length_penalty = g.at("length_penalty").get<double>();
  if (cfg.beam_size == 0) throw ContractError("generate: beam_size must be >= 1");
  return cfg;
}

std::vector<eval::RougeVariant> metrics(const json& c) {
  std::vector<eval::RougeVariant> out;
  std::stringstream ss(c.at("eval").at("metrics").get<std::string>());
  for (std::string m; std::getline(ss, m, ',');) {
    if (!m.empty()) out.push_back(eval::parse_variant(m));
  }
  if (out.empty()) throw ContractError("eval: no metrics requested");
  return out;
}

std::optional<std::string> reference_kind(const json& c) {
  const auto r = c.at("eval").at("reference").get<std::string>();
  if (r == "gold") return std::nullopt;
  return std::string(annotate::to_string(annotate::parse_prompt_kind(r)));
}

annotate::AnnotationClientConfig annotate_config(const json& c) {
  const auto& a = c.at("annotate");
  annotate::AnnotationClientConfig cfg;
  cfg.transport = annotate::parse_transport(a.at("transport").get<std::string>());
  cfg.fixture_dir = a.at("fixtures").get<std::string>();
  cfg.endpoint = a.at("endpoint").get<std::string>();
  cfg.model = a.at("model").get<std::string>();
  cfg.max_retries = a.at("max_retries").get<int>();
  cfg.rate_limit_per_minute = a.at("rate_limit_per_minute").get<double>();
  cfg.max_in_flight = a.at("max_in_flight").get<std::size_t>();
  cfg.timeout_ms = a.at("timeout_ms").get<int>();
  cfg.backoff_ms = a.at("backoff_ms").get<int>();
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- stages

using Paths = std::map<std::string, std::string>;

corpus::Corpus load_or_throw(const std::string& path, corpus::Split split) {
  auto r = corpus::load_corpus(path, split);
  if (r.corpus.products.empty()) throw DataError("no valid products in " + path);
  return std::move(r.corpus);
}

Paths stage_ingest(const std::string& input, corpus::Split split, const std::string& out_path) {
  auto r = corpus::load_corpus(input, split);
  const std::string report = input + ".load_report.json";
  write_text(report, r.report.to_json());
  if (r.corpus.products.empty()) throw DataError("ingest: no valid products in " + input + " (see " + report + ")");
  ensure_parent(out_path);
  corpus::write_corpus(r.corpus, out_path);
  return {{"corpus", out_path}, {"load_report", report}};
}

embed::CacheResult stage_embed(const json& c, const std::string& corpus_path) {
  const auto corp = load_or_throw(corpus_path, corpus::Split::train);
  const auto texts = embed::corpus_texts(corp);
  return embed::ensure_cache(corpus_path, embed_config(c), texts);
}

Paths stage_sdc(const json& c, const std::string& corpus_path, const std::string& out_path, json& info) {
  const auto hp = sdc_params(c);
  const auto mode = sdc::parse_mode(c.at("sdc").at("mode").get<std::string>());
  const auto corp = load_or_throw(corpus_path, corpus::Split::train);
  const auto cache = embed::ensure_cache(corpus_path, embed_config(c), embed::corpus_texts(corp));
  const auto store = embed::EmbeddingStore::load(cache.path);
  const auto run = sdc::run_sdc(corp, store, hp, mode, c.at("seed").get<std::uint64_t>());
  ensure_parent(out_path);
  sdc::write_quadruplets(run.quadruplets, out_path);
  info["quadruplets"] = run.quadruplets.size();
  json skipped = json::array();
  for (const auto& s : run.skipped) skipped.push_back({{"product_id", s.product_id}, {"reason", s.reason}});
  info["skipped"] = std::move(skipped);
  return {{"quadruplets", out_path}, {"embeddings", cache.path}};
}

std::vector<std::string> quadruplet_texts(const std::vector<sdc::SyntheticQuadruplet>& qs) {
  std::vector<std::string> out;
  for (const auto& q : qs) {
    out.insert(out.end(), q.input_reviews.begin(), q.input_reviews.end());
    if (q.description) out.push_back(*q.description);
    out.insert(out.end(), q.qa.begin(), q.qa.end());
    out.push_back(q.pseudo_summary);
  }
  return out;
}

Paths stage_train(const json& c, const std::string& quads_path, const std::string& ckpt_out, json& info) {
  const auto data = sdc::read_quadruplets(quads_path);
  if (data.empty()) throw DataError("train: no quadruplets in " + quads_path);
  const auto tcfg = train_config(c);
  const auto& m = c.at("model");
  const auto tk = tok::Tokenizer::build(quadruplet_texts(data), m.at("min_count").get<std::size_t>(),
                                        m.at("max_vocab").get<std::size_t>());
  const auto mcfg = model_config(c, tk.size());
  const std::string run_dir = (fs::path(ckpt_out).parent_path() / "train").string();
  auto res = train::train(model::init_params(mcfg, tcfg.seed), tk, data, tcfg, run_dir);
  ensure_parent(ckpt_out);
  fs::copy_file(res.report.final_checkpoint, ckpt_out, fs::copy_options::overwrite_existing);

  json curve = json::array();
  for (const auto& [step, loss] : res.report.loss_curve) curve.push_back({step, loss});
  json dev = json::array();
  for (const auto& d : res.report.dev) dev.push_back({{"step", d.step}, {"loss", d.loss}});
  json report{{"seed", res.report.seed},
              {"total_steps", res.report.total_steps},
              {"parameters", res.params.parameter_count()},
              {"vocab", tk.size()},
              {"dev_products", res.report.dev_products},
              {"dev", std::move(dev)},
              {"loss_curve", std::move(curve)}};
  const std::string report_path = (fs::path(ckpt_out).parent_path() / "train_report.json").string();
  write_text(report_path, report.dump(2) + "\n");
  info["total_steps"] = res.report.total_steps;
  info["final_loss"] = res.report.loss_curve.empty() ? 0.0 : res.report.loss_curve.back().second;
  info["wall_seconds"] = res.report.wall_seconds;
  return {{"checkpoint", ckpt_out}, {"train_report", report_path}};
}

Paths stage_summarize(const json& c, const std::string& ckpt_path, const std::string& corpus_path,
                      const std::string& out_path) {
  const auto gcfg = gen_config(c);
  const auto cp = ckpt::load(ckpt_path);
  const auto corp = load_or_throw(corpus_path, corpus::Split::test);
  const auto sums = gen::summarize_all(cp.params, cp.tokenizer, corp.products, gen::for_model(cp.params, gcfg));
  ensure_parent(out_path);
  gen::write_summaries(sums, out_path);
  return {{"summaries", out_path}};
}

std::string score_line(const eval::ProductScores& p) {
  json j{{"product_id", p.product_id}, {"references", p.references}};
  for (const auto& [v, s] : p.scores) {
    j[std::string(eval::to_string(v))] = {{"p", s.precision}, {"r", s.recall}, {"f", s.f1}};
  }
  return j.dump();
}

Paths stage_eval(const json& c, const std::string& pred, const std::string& gold, const std::string& prefix,
                 std::ostream& out) {
  const auto variants = metrics(c);
  const auto mr = eval::parse_multi_ref(c.at("eval").at("multi_ref").get<std::string>());
  const auto ref = reference_kind(c);
  const auto sums = gen::read_summaries(pred);
  const auto corp = load_or_throw(gold, corpus::Split::test);
  std::vector<eval::CandidateSummary> cands;
  for (const auto& s : sums) cands.push_back({s.product_id, s.text});
  const auto rep = eval::corpus_rouge(cands, corp.products, variants, mr, ref);
  std::string lines;
  for (const auto& p : rep.per_product) lines += score_line(p) + "\n";
  write_text(prefix + ".txt", rep.render_table());
  write_text(prefix + ".jsonl", lines);
  write_text(prefix + ".json", rep.to_json().dump(2) + "\n");
  out << rep.render_table();
  return {{"table", prefix + ".txt"}, {"per_product", prefix + ".jsonl"}, {"report", prefix + ".json"}};
}

Paths stage_ablate(const json& c, const std::string& ckpt_path, const std::string& corpus_path,
                   const std::string& prefix, std::ostream& out) {
  const auto gcfg = gen_config(c);
  const auto mr = eval::parse_multi_ref(c.at("eval").at("multi_ref").get<std::string>());
  const auto ref = reference_kind(c);
  const auto cp = ckpt::load(ckpt_path);
  const auto corp = load_or_throw(corpus_path, corpus::Split::test);
  const auto table = eval::run_ablation(cp.params, cp.tokenizer, corp.products, gen::for_model(cp.params, gcfg), mr, ref);
  write_text(prefix + ".txt", table.render_table());
  write_text(prefix + ".json", table.to_json().dump(2) + "\n");
  out << table.render_table();
  return {{"table", prefix + ".txt"}, {"report", prefix + ".json"}};
}

Paths stage_annotate(const json& c, const std::string& corpus_path, const std::string& out_path, json& info) {
  const auto cfg = annotate_config(c);
  const auto kind = annotate::parse_prompt_kind(c.at("annotate").at("kind").get<std::string>());
  const auto corp = load_or_throw(corpus_path, corpus::Split::test);
  auto transport = annotate::make_transport(cfg);
  const std::string prov = out_path + ".provenance.jsonl";
  const auto res = annotate::annotate_testset(corp, cfg, kind, *transport, prov);
  ensure_parent(out_path);
  corpus::write_corpus(res.corpus, out_path);
  info["annotated"] = res.annotated;
  info["skipped"] = res.skipped;
  json fails = json::array();
  for (const auto& f : res.failures) {
    fails.push_back({{"product_id", f.product_id}, {"error", f.error}, {"attempts", f.attempts}});
  }
  info["failures"] = fails;
  if (!res.failures.empty()) {
    throw Error("annotate: " + std::to_string(res.failures.size()) + " product(s) failed; first: " +
                res.failures.front().product_id + ": " + res.failures.front().error);
  }
  return {{"corpus", out_path}, {"provenance", prov}};
}

// ---------------------------------------------------------------- pipeline

struct StageSpec {
  std::vector<std::string> needs;
  std::vector<std::string> makes;
  std::vector<std::string> sections;  // config that feeds the stage key
};

const std::map<std::string, StageSpec>& stage_specs() {
  static const std::map<std::string, StageSpec> specs{
      {"ingest", {{}, {}, {}}},
      {"embed", {{"corpus_train"}, {"embeddings"}, {"embed"}}},
      {"sdc", {{"corpus_train", "embeddings"}, {"quadruplets"}, {"seed", "embed", "sdc"}}},
      {"train", {{"quadruplets"}, {"checkpoint"}, {"seed", "model", "train"}}},
      {"summarize", {{"checkpoint", "corpus_test"}, {"summaries"}, {"generate"}}},
      {"eval", {{"summaries", "corpus_test"}, {"eval_report"}, {"eval"}}},
      {"ablate", {{"checkpoint", "corpus_test"}, {"ablation"}, {"generate", "eval"}}},
      {"annotate", {{"corpus_test"}, {"annotated"}, {"annotate"}}},
  };
  return specs;
}

class Pipeline {
 public:
  Pipeline(const json& cfg, std::ostream& out) : cfg_(cfg), out_(out), dir_(cfg.at("out_dir").get<std::string>()) {}

  void check() {
    const auto& p = cfg_.at("pipeline");
    for (const auto& s : p.at("stages")) stages_.push_back(s.get<std::string>());
    if (stages_.size() < 2) throw UsageError("pipeline: at least two stages are required");
    const auto& specs = stage_specs();
    for (const auto& s : stages_) {
      if (!specs.count(s)) throw UsageError("pipeline: unknown stage '" + s + "'");
    }
    std::set<std::string> have;
    const std::string train_in = p.at("train_input").get<std::string>();
    const std::string test_in = p.at("test_input").get<std::string>();
    const bool ingest = std::find(stages_.begin(), stages_.end(), "ingest") != stages_.end();
    auto seed = [&](const std::string& art, const std::string& path) {
      if (path.empty()) return;
      art_[art] = path;
      have.insert(art);
    };
    if (ingest) {
      seed("raw_train", train_in);
      seed("raw_test", test_in);
    } else {
      seed("corpus_train", train_in);
      seed("corpus_test", test_in);
    }
    seed("quadruplets", p.at("quadruplets").get<std::string>());
    seed("checkpoint", p.at("checkpoint").get<std::string>());
    std::set<std::string> seen;
    for (const auto& s : stages_) {
      const auto it = specs.find(s);
      if (!seen.insert(s).second) throw UsageError("pipeline: stage '" + s + "' listed twice");
      if (s == "ingest") {
        if (!have.count("raw_train") && !have.count("raw_test")) {
          throw UsageError("pipeline: stage 'ingest' needs pipeline.train_input or pipeline.test_input");
        }
        if (have.count("raw_train")) have.insert("corpus_train");
        if (have.count("raw_test")) have.insert("corpus_test");
        continue;
      }
      for (const auto& need : it->second.needs) {
        if (!have.count(need)) {
          throw UsageError("pipeline: stage '" + s + "' needs " + need + ", which no earlier stage or input provides");
        }
      }
      for (const auto& m : it->second.makes) have.insert(m);
    }
  }

  json run() {
    const std::string state_path = dir_ + "/pipeline.state.json";
    json state = json::object();
    if (fs::exists(state_path)) {
      try {
        state = json::parse(text::read_file(state_path));
      } catch (const json::exception&) {
        state = json::object();
      }
    }
    json report = json::array();
    bool upstream_ran = false;
    for (const auto& s : stages_) {
      const Paths inputs = stage_inputs(s);
      const std::string key = stage_key(s, inputs);
      const bool cached = !upstream_ran && state.contains(s) && state[s].value("key", "") == key &&
                          outputs_intact(state[s].at("outputs"));
      json entry{{"stage", s}};
      if (cached) {
        for (const auto& [role, v] : state[s].at("outputs").items()) art_[role] = v.at("path").get<std::string>();
        entry["status"] = "skipped";
      } else {
        json info = json::object();
        const Paths outputs = execute(s, info);
        json outs = json::object();
        for (const auto& [role, path] : outputs) {
          outs[role] = {{"path", path}, {"hash", hash_or_empty(path)}};
          art_[role] = path;
        }
        state[s] = {{"key", key}, {"outputs", outs}};
        write_text(state_path, state.dump(2) + "\n");
        entry["status"] = "ran";
        if (!info.empty()) entry["info"] = std::move(info);
        upstream_ran = true;
      }
      entry["outputs"] = state[s].at("outputs");
      out_ << json{{"stage", s}, {"status", entry["status"]}}.dump() << "\n";
      report.push_back(std::move(entry));
    }
    return report;
  }

  const Paths& artifacts() const { return art_; }

 private:
  Paths stage_inputs(const std::string& s) const {
    Paths in;
    if (s == "ingest") {
      for (const char* r : {"raw_train", "raw_test"}) {
        if (art_.count(r)) in[r] = art_.at(r);
      }
      return in;
    }
    for (const auto& need : stage_specs().at(s).needs) in[need] = art_.at(need);
    return in;
  }

  std::string stage_key(const std::string& s, const Paths& inputs) const {
    json k{{"stage", s}};
    for (const auto& sec : stage_specs().at(s).sections) k["config"][sec] = cfg_.at(sec);
    k["inputs"] = json::object();
    for (const auto& [role, path] : inputs) k["inputs"][role] = hash_or_empty(path);
    return text::hex64(text::fnv1a64(k.dump()));
  }

  static bool outputs_intact(const json& outs) {
    for (const auto& [role, v] : outs.items()) {
      const std::string h = hash_or_empty(v.at("path").get<std::string>());
      if (h.empty() || h != v.at("hash").get<std::string>()) return false;
    }
    return true;
  }

  Paths execute(const std::string& s, json& info) {
    if (s == "ingest") {
      Paths out;
      if (art_.count("raw_train")) {
        auto r = stage_ingest(art_.at("raw_train"), corpus::Split::train, dir_ + "/corpus.train.jsonl");
        out["corpus_train"] = r.at("corpus");
      }
      if (art_.count("raw_test")) {
        auto r = stage_ingest(art_.at("raw_test"), corpus::Split::test, dir_ + "/corpus.test.jsonl");
        out["corpus_test"] = r.at("corpus");
      }
      return out;
    }
    if (s == "embed") {
      const auto r = stage_embed(cfg_, art_.at("corpus_train"));
      info["reused"] = r.reused;
      return {{"embeddings", r.path}};
    }
    if (s == "sdc") {
      auto r = stage_sdc(cfg_, art_.at("corpus_train"), dir_ + "/quadruplets.jsonl", info);
      return {{"quadruplets", r.at("quadruplets")}};
    }
    if (s == "train") {
      auto r = stage_train(cfg_, art_.at("quadruplets"), dir_ + "/model.ckpt", info);
      return {{"checkpoint", r.at("checkpoint")}, {"train_report", r.at("train_report")}};
    }
    if (s == "summarize") {
      return stage_summarize(cfg_, art_.at("checkpoint"), art_.at("corpus_test"), dir_ + "/summaries.jsonl");
    }
    if (s == "eval") {
      std::ostringstream sink;
      auto r = stage_eval(cfg_, art_.at("summaries"), art_.at("corpus_test"), dir_ + "/eval", sink);
      return {{"eval_report", r.at("report")}, {"eval_table", r.at("table")}, {"eval_per_product", r.at("per_product")}};
    }
    if (s == "ablate") {
      std::ostringstream sink;
      auto r = stage_ablate(cfg_, art_.at("checkpoint"), art_.at("corpus_test"), dir_ + "/ablation", sink);
      return {{"ablation", r.at("report")}, {"ablation_table", r.at("table")}};
    }
    const std::string kind = cfg_.at("annotate").at("kind").get<std::string>();
    auto r = stage_annotate(cfg_, art_.at("corpus_test"), dir_ + "/corpus.test." + kind + ".jsonl", info);
    return {{"annotated", r.at("corpus")}};
  }

  const json& cfg_;
  std::ostream& out_;
  std::string dir_;
  std::vector<std::string> stages_;
  Paths art_;
};

// ---------------------------------------------------------------- dispatch

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "UsageError";
  if (dynamic_cast<const ContractError*>(&e)) return "ContractError";
  if (dynamic_cast<const DataError*>(&e)) return "DataError";
  if (dynamic_cast<const NumericError*>(&e)) return "NumericError";
  if (dynamic_cast<const TransportError*>(&e)) return "TransportError";
  if (dynamic_cast<const Error*>(&e)) return "Error";
  return "InternalError";
}

std::string scan_out_dir(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out-dir" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--out-dir=", 0) == 0) return args[i].substr(10);
  }
  return defaults().at("out_dir").get<std::string>();
}

void append_manifest(const std::string& out_dir, const json& m, std::ostream& err) {
  try {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir + "/manifests.jsonl", std::ios::app | std::ios::binary);
    f << m.dump() << '\n';
    if (!f) throw DataError("write failed");
  } catch (const std::exception& e) {
    err << json{{"warning", std::string("could not append manifest: ") + e.what()}}.dump() << "\n";
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  json manifest{{"subcommand", nullptr}, {"command", args}, {"started", utc_now()}};

  CLI::App app{"MEDOS: multi-source opinion summarization"};
  app.name("medos");
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "Seed for every random draw");
  app.add_option("--out-dir", out_dir, "Directory for outputs and manifests");

  Overrides ov;
  std::string input, output, pred, gold, checkpoint, split_name = "train";

  auto* ingest = app.add_subcommand("ingest", "Load and normalize a product corpus");
  ingest->add_option("--input", input, "Line-delimited product records")->required();
  ingest->add_option("--split", split_name, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  ingest->add_option("--out", output, "Normalized corpus path");

  auto add_embed_flags = [&](CLI::App* sub) {
    ov.add<std::string>(sub, "--embedder", "embed.embedder", "external, precomputed or fallback")
        ->check(CLI::IsMember({"external", "precomputed", "fallback"}));
    ov.add<std::string>(sub, "--checkpoint", "embed.checkpoint", "Sentence encoder name");
    ov.add<std::size_t>(sub, "--dimension", "embed.dimension", "Fallback embedding dimension");
    ov.add<std::string>(sub, "--precomputed", "embed.precomputed", "Precomputed embedding file");
    ov.add<std::string>(sub, "--endpoint", "embed.endpoint", "Embedding service URL");
  };
  auto* embed_cmd = app.add_subcommand("embed", "Embed every text of a corpus into the cache");
  embed_cmd->add_option("--input", input, "Corpus path")->required();
  add_embed_flags(embed_cmd);

  auto* sdc_cmd = app.add_subcommand("sdc", "Build synthetic quadruplets");
  sdc_cmd->add_option("--input", input, "Training corpus path")->required();
  sdc_cmd->add_option("--out", output, "Quadruplet output path");
  add_embed_flags(sdc_cmd);
  ov.add<std::size_t>(sdc_cmd, "--k", "sdc.k", "Input reviews per quadruplet");
  ov.add<double>(sdc_cmd, "--percentile", "sdc.percentile", "Pseudo-summary percentile cutoff");
  ov.add<double>(sdc_cmd, "--lambda1", "sdc.lambda1", "Description weight");
  ov.add<double>(sdc_cmd, "--lambda2", "sdc.lambda2", "Question-answer weight");
  ov.add<std::size_t>(sdc_cmd, "--m-cap", "sdc.m_cap", "Question-answer pairs kept");
  ov.add<std::string>(sdc_cmd, "--mode", "sdc.mode", "full, reviews-only or random")
      ->check(CLI::IsMember({"full", "reviews-only", "random"}));

  auto* train_cmd = app.add_subcommand("train", "Train a summarizer on quadruplets");
  train_cmd->add_option("--input", input, "Quadruplet file")->required();
  train_cmd->add_option("--out", output, "Final checkpoint path");
  ov.add<std::string>(train_cmd, "--arch", "model.arch", "medos or concat")
      ->check(CLI::IsMember({"medos", "concat"}));
  ov.add<std::size_t>(train_cmd, "--d-model", "model.d_model", "Hidden size");
  ov.add<std::size_t>(train_cmd, "--layers", "model.num_layers", "Layers per stack");
  ov.add<std::size_t>(train_cmd, "--heads", "model.num_heads", "Attention heads");
  ov.add<double>(train_cmd, "--lr", "train.learning_rate", "Base learning rate");
  ov.add<std::size_t>(train_cmd, "--batch-size", "train.batch_size", "Examples per step");
  ov.add<std::size_t>(train_cmd, "--epochs", "train.epochs", "Epochs");
  ov.add<std::size_t>(train_cmd, "--max-steps", "train.max_steps", "Step cap (0 = none)");
  ov.add<double>(train_cmd, "--grad-clip", "train.grad_clip", "Global gradient norm clip");

  auto add_gen_flags = [&](CLI::App* sub) {
    ov.add<std::size_t>(sub, "--beam", "generate.beam_size", "Beam size");
    ov.add<std::size_t>(sub, "--max-length", "generate.max_length", "Maximum summary tokens");
    ov.add<std::size_t>(sub, "--no-repeat-ngram", "generate.no_repeat_ngram", "Blocked n-gram order");
    ov.add<double>(sub, "--length-penalty", "generate.length_penalty", "Length penalty exponent");
  };
  auto* summarize_cmd = app.add_subcommand("summarize", "Generate one summary per product");
  summarize_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  summarize_cmd->add_option("--input", input, "Test corpus")->required();
  summarize_cmd->add_option("--out", output, "Summary output path");
  add_gen_flags(summarize_cmd);

  auto add_eval_flags = [&](CLI::App* sub) {
    ov.add<std::string>(sub, "--metrics", "eval.metrics", "Comma list of r1, r2, rl");
    ov.add<std::string>(sub, "--multi-ref", "eval.multi_ref", "max or mean")->check(CLI::IsMember({"max", "mean"}));
    ov.add<std::string>(sub, "--reference", "eval.reference", "gold, gpt-r or gpt-rdq")
        ->check(CLI::IsMember({"gold", "gpt-r", "gpt-rdq"}));
  };
  auto* eval_cmd = app.add_subcommand("eval", "Score summaries with ROUGE");
  eval_cmd->add_option("--pred", pred, "Summary file")->required();
  eval_cmd->add_option("--gold", gold, "Corpus with references")->required();
  eval_cmd->add_option("--out", output, "Report path prefix");
  add_eval_flags(eval_cmd);

  auto* ablate_cmd = app.add_subcommand("ablate", "Score the four source configurations");
  ablate_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ablate_cmd->add_option("--input", input, "Test corpus with references")->required();
  ablate_cmd->add_option("--out", output, "Report path prefix");
  add_gen_flags(ablate_cmd);
  add_eval_flags(ablate_cmd);

  auto* annotate_cmd = app.add_subcommand("annotate", "Add model-written reference summaries to a test corpus");
  annotate_cmd->add_option("--input", input, "Test corpus")->required();
  annotate_cmd->add_option("--out", output, "Extended corpus path");
  ov.add<std::string>(annotate_cmd, "--kind", "annotate.kind", "gpt-r or gpt-rdq")
      ->check(CLI::IsMember({"gpt-r", "gpt-rdq"}));
  ov.add<std::string>(annotate_cmd, "--transport", "annotate.transport", "live or stub")
      ->check(CLI::IsMember({"live", "stub"}));
  ov.add<std::string>(annotate_cmd, "--fixtures", "annotate.fixtures", "Stub fixture directory");
  ov.add<std::string>(annotate_cmd, "--endpoint", "annotate.endpoint", "Completion endpoint URL");
  ov.add<std::string>(annotate_cmd, "--model", "annotate.model", "Model name sent to the endpoint");
  ov.add<int>(annotate_cmd, "--max-retries", "annotate.max_retries", "Retries per product");
  ov.add<double>(annotate_cmd, "--rate-limit", "annotate.rate_limit_per_minute", "Requests per minute");

  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run the stages listed in the config");

  int code = kExitOk;
  std::string resolved_out_dir;
  std::string sub_name;
  try {
    try {
      std::vector<std::string> rev(args.rbegin(), args.rend());
      app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
      out << app.help();
      for (auto* s : app.get_subcommands()) out << s->help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      std::string usage = app.help();
      for (auto* s : app.get_subcommands()) usage = s->help();
      err << usage;
      throw UsageError(e.what());
    }
    auto* sub = app.get_subcommands().front();
    sub_name = sub->get_name();
    manifest["subcommand"] = sub_name;

    json cfg = defaults();
    if (config_path) {
      json file;
      try {
        file = json::parse(text::read_file(*config_path));
      } catch (const json::exception& e) {
        throw UsageError("config: " + *config_path + " is not valid JSON: " + e.what());
      } catch (const std::exception& e) {
        throw UsageError("config: cannot read " + *config_path + ": " + e.what());
      }
      merge(cfg, file, "");
      resolve_paths(cfg, file, fs::path(*config_path).parent_path());
    }
    for (const auto& f : ov.apply) f(cfg);
    if (seed) cfg["seed"] = *seed;
    if (out_dir) cfg["out_dir"] = *out_dir;
    resolved_out_dir = cfg.at("out_dir").get<std::string>();
    manifest["config"] = cfg;
    manifest["seed"] = cfg.at("seed");
    const std::string dir = resolved_out_dir;
    auto dflt = [&](const std::string& name) { return output.empty() ? dir + "/" + name : output; };

    Paths ins, outs;
    json info = json::object();
    if (sub == ingest) {
      ins = {{"input", input}};
      outs = stage_ingest(input, corpus::parse_split(split_name), dflt("corpus." + split_name + ".jsonl"));
    } else if (sub == embed_cmd) {
      ins = {{"input", input}};
      const auto r = stage_embed(cfg, input);
      info["reused"] = r.reused;
      outs = {{"embeddings", r.path}};
    } else if (sub == sdc_cmd) {
      ins = {{"input", input}};
      outs = stage_sdc(cfg, input, dflt("quadruplets.jsonl"), info);
    } else if (sub == train_cmd) {
      ins = {{"input", input}};
      outs = stage_train(cfg, input, dflt("model.ckpt"), info);
    } else if (sub == summarize_cmd) {
      ins = {{"checkpoint", checkpoint}, {"input", input}};
      outs = stage_summarize(cfg, checkpoint, input, dflt("summaries.jsonl"));
    } else if (sub == eval_cmd) {
      ins = {{"pred", pred}, {"gold", gold}};
      outs = stage_eval(cfg, pred, gold, dflt("eval"), out);
    } else if (sub == ablate_cmd) {
      ins = {{"checkpoint", checkpoint}, {"input", input}};
      outs = stage_ablate(cfg, checkpoint, input, dflt("ablation"), out);
    } else if (sub == annotate_cmd) {
      ins = {{"input", input}};
      const std::string kind = cfg.at("annotate").at("kind").get<std::string>();
      try {
        outs = stage_annotate(cfg, input, dflt("corpus.test." + kind + ".jsonl"), info);
      } catch (...) {
        manifest["info"] = info;
        throw;
      }
    } else if (sub == pipeline_cmd) {
      Pipeline pl(cfg, out);
      pl.check();
      info["stages"] = pl.run();
      outs = pl.artifacts();
    }
    manifest["inputs"] = hashes(ins);
    manifest["outputs"] = hashes(outs);
    if (!info.empty()) manifest["info"] = info;
    if (sub != pipeline_cmd) {
      json summary{{"subcommand", sub_name}, {"outputs", json::object()}};
      for (const auto& [role, path] : outs) summary["outputs"][role] = path;
      if (!info.empty()) summary["info"] = info;
      out << summary.dump() << "\n";
    }
  } catch (const std::exception& e) {
    const bool usage = dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ContractError*>(&e);
    code = usage ? kExitUsage : kExitFailure;
    json rec{{"error", {{"type", error_type(e)}, {"message", e.what()}}}};
    if (!sub_name.empty()) rec["error"]["subcommand"] = sub_name;
    err << rec.dump() << "\n";
    manifest["error"] = rec["error"];
  }
  manifest["exit_code"] = code;
  manifest["finished"] = utc_now();
  append_manifest(resolved_out_dir.empty() ? scan_out_dir(args) : resolved_out_dir, manifest, err);
  return code;
}

}  // namespace medos::cli
