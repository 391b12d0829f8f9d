#include "seprep/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "seprep/ops.hpp"
#include "seprep/rng.hpp"

namespace seprep::bench {

using nlohmann::json;

double h_score(double s, double t) {
  if (!(s >= 0 && s <= 100) || !(t >= 0 && t <= 100)) {
    throw std::invalid_argument("h_score inputs must be percentages in [0,100]");
  }
  if (s + t == 0) return 0.0;
  if (s == t) return s;
  return 2 * s * t / (s + t);
}

Flops& Flops::operator+=(const Flops& o) {
  extractor += o.extractor;
  heads += o.heads;
  total += o.total;
  return *this;
}

template <typename T>
Flops flops_count(const ModelBundle<T>& model, const Shape& input_chw) {
  model.validate();
  const ArchDesc& a = model.arch;
  Shape in = input_chw.empty() ? Shape{a.in_channels, a.in_size, a.in_size} : input_chw;
  if (in.size() != 3 || in[0] != a.in_channels) {
    throw ShapeError("flops_count: input must be [C,H,W] with C=" + std::to_string(a.in_channels) + ", got " +
                     shape_str(in));
  }
  std::uint64_t c1 = in[0];
  std::uint64_t h = in[1];
  std::uint64_t w = in[2];
  Flops f;
  for (std::size_t u = 0; u < model.units.size(); ++u) {
    const std::uint64_t c2 = a.widths[u];
    const std::uint64_t kk = a.kernel;
    if (h + 2 * a.padding < kk || w + 2 * a.padding < kk) throw ShapeError("flops_count: input too small");
    const std::uint64_t h2 = (h + 2 * a.padding - kk) / a.stride + 1;
    const std::uint64_t w2 = (w + 2 * a.padding - kk) / a.stride + 1;
    const std::uint64_t elems = c2 * h2 * w2;
    const std::uint64_t conv = 2 * elems * c1 * kk * kk;
    std::uint64_t unit = 0;
    if (std::holds_alternative<ConvBNPathway<T>>(model.units[u])) {
      unit = conv + 2 * elems;
    } else if (const auto* s = std::get_if<SepUnit<T>>(&model.units[u])) {
      const std::uint64_t k = s->k();
      unit = k * (conv + 2 * elems) + (2 * k - 1) * elems;
    } else {
      unit = conv + elems;
    }
    f.extractor += unit + elems;  // + ReLU
    c1 = c2;
    h = h2;
    w = w2;
  }
  f.extractor += c1 * h * w;  // global average pool
  f.heads = static_cast<std::uint64_t>(model.num_heads()) * 2 * a.classes * a.feature_dim();
  f.total = f.extractor + f.heads;
  return f;
}

template Flops flops_count(const ModelBundle<float>&, const Shape&);
template Flops flops_count(const ModelBundle<double>&, const Shape&);

double accuracy(const Tensor<float>& scores, std::span<const int> labels) {
  if (scores.rank() != 2 || scores.dim(0) != labels.size()) throw ShapeError("accuracy: scores must be [N,C]");
  if (labels.empty()) throw PreconditionError("accuracy: empty test set");
  const auto pred = argmax_rows(scores);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

template <typename T>
Predictor model_predictor(ModelBundle<T> model, PredictOptions<T> opts) {
  return [model = std::move(model), opts = std::move(opts)](const Tensor<float>& images) {
    if constexpr (std::is_same_v<T, float>) {
      return predict(model, images, opts).probs;
    } else {
      return tensor_cast<float>(predict(model, tensor_cast<T>(images), opts).probs);
    }
  };
}

template Predictor model_predictor(ModelBundle<float>, PredictOptions<float>);
template Predictor model_predictor(ModelBundle<double>, PredictOptions<double>);

Predictor ensemble_predictor(std::vector<ModelBundle<float>> models) {
  if (models.empty()) throw PreconditionError("ensemble needs K >= 1 models");
  return [models = std::move(models)](const Tensor<float>& images) {
    return ensemble_baseline<float>(models, images);
  };
}

std::string fingerprint(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

json report_json(const EvalReport& r, bool with_timing) {
  json sources = json::array();
  for (const auto& s : r.sources) sources.push_back({{"domain", s.name}, {"accuracy", s.accuracy}});
  json j = {{"method", r.method},
            {"sources", sources},
            {"target", r.target},
            {"S", r.source_mean},
            {"T", r.target_acc},
            {"H", r.h},
            {"flops", {{"extractor", r.flops.extractor}, {"heads", r.flops.heads}, {"total", r.flops.total}}},
            {"fingerprint", r.fingerprint}};
  if (with_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string EvalReport::to_json(bool with_timing) const { return report_json(*this, with_timing).dump(2); }

std::string EvalReport::csv_header() {
  return "method,target,S,T,H,flops_extractor,flops_heads,flops_total,wall_seconds,fingerprint,source_accuracies";
}

std::string EvalReport::to_csv_row(bool with_timing) const {
  std::ostringstream os;
  os << method << ',' << target << ',' << fixed(source_mean, 4) << ',' << fixed(target_acc, 4) << ',' << fixed(h, 4)
     << ',' << flops.extractor << ',' << flops.heads << ',' << flops.total << ','
     << (with_timing ? fixed(wall_seconds, 3) : "") << ',' << fingerprint << ',';
  for (std::size_t i = 0; i < sources.size(); ++i) {
    os << (i ? ";" : "") << sources[i].name << '=' << fixed(sources[i].accuracy, 4);
  }
  return os.str();
}

EvalReport evaluate(const std::string& method, const Predictor& predictor, const Flops& flops,
                    std::span<const NamedSet> sources, const NamedSet& target) {
  const auto start = std::chrono::steady_clock::now();
  auto score = [&](const NamedSet& ns) {
    if (ns.set == nullptr || ns.set->size() == 0) throw PreconditionError("evaluate: empty test set " + ns.name);
    const Tensor<float> probs = predictor(ns.set->images);
    return accuracy(probs, ns.set->labels);
  };
  EvalReport r;
  r.method = method;
  r.target = target.name;
  double sum = 0;
  for (const auto& s : sources) {
    r.sources.push_back({s.name, score(s)});
    sum += r.sources.back().accuracy;
  }
  r.source_mean = sources.empty() ? 0.0 : sum / static_cast<double>(sources.size());
  r.target_acc = score(target);
  r.h = h_score(r.source_mean, r.target_acc);
  r.flops = flops;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json id = report_json(r, false);
  id.erase("fingerprint");
  r.fingerprint = fingerprint(id.dump());
  return r;
}

// ---------------------------------------------------------------------------
// Experiment configuration

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) throw std::invalid_argument("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename V>
void read_opt(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"lr", t.lr},
          {"batch_size", t.batch_size},
          {"label_smoothing", t.label_smoothing},
          {"seed", t.seed},
          {"init_seed", t.init_seed}};
}

void read_train(const json& s, const std::string& where, TrainConfig& t) {
  reject_unknown(s, {"epochs", "lr", "batch_size", "label_smoothing", "seed", "init_seed"}, where);
  read_opt(s, "epochs", t.epochs);
  read_opt(s, "lr", t.lr);
  read_opt(s, "batch_size", t.batch_size);
  read_opt(s, "label_smoothing", t.label_smoothing);
  read_opt(s, "seed", t.seed);
  read_opt(s, "init_seed", t.init_seed);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (domains.size() < 2) throw std::invalid_argument("experiment needs at least two domains");
  for (const auto& d : domains) data::parse_domain(d);
  for (const auto& d : pretrain_domains) {
    if (std::find(domains.begin(), domains.end(), d) != domains.end()) {
      throw std::invalid_argument("pretraining domain '" + d + "' is also a benchmark domain");
    }
    data::parse_domain(d);
  }
  if (targets.empty()) throw std::invalid_argument("experiment needs at least one target domain");
  for (std::size_t t : targets) {
    if (t >= domains.size()) throw std::invalid_argument("target index " + std::to_string(t) + " out of range");
  }
  if (classes < 2 || classes > data::kMaxClasses) throw std::invalid_argument("classes must lie in [2,10]");
  if (arch.classes != classes) throw std::invalid_argument("arch.classes must equal classes");
  arch.validate();
  if (train_per_class < 1 || test_per_class < 1) throw std::invalid_argument("per-class counts must be >= 1");
  if (methods.empty()) throw std::invalid_argument("experiment needs at least one method");
  for (const auto& m : methods) {
    if (std::find(all_methods().begin(), all_methods().end(), m) == all_methods().end()) {
      throw std::invalid_argument("unknown method '" + m + "'");
    }
  }
  adapt.validate();
}

std::string ExperimentConfig::to_json() const {
  json j = {
      {"domains", domains},
      {"targets", targets},
      {"classes", classes},
      {"train_per_class", train_per_class},
      {"test_per_class", test_per_class},
      {"seed", seed},
      {"methods", methods},
      {"weight_mode", weight_mode_name(weight_mode)},
      {"arch", {{"widths", arch.widths}, {"kernel", arch.kernel}, {"stride", arch.stride}, {"padding", arch.padding}}},
      {"pretrain_domains", pretrain_domains},
      {"pretrain", train_json(pretrain)},
      {"source", train_json(source)},
      {"adapt",
       {{"epochs", adapt.epochs},
        {"lr", adapt.lr},
        {"batch_size", adapt.batch_size},
        {"pl_weight", adapt.pl_weight},
        {"im_diversity_weight", adapt.im_diversity_weight},
        {"refresh_interval", adapt.refresh_interval},
        {"weight_refresh_interval", adapt.weight_refresh_interval},
        {"criterion", criterion_name(adapt.criterion)},
        {"reweight", adapt.reweight},
        {"train_heads", adapt.train_heads},
        {"head_lr_multiplier", adapt.head_lr_multiplier},
        {"seed", adapt.seed}}},
      {"kd",
       {{"temperature", kd.temperature},
        {"epochs", kd.epochs},
        {"lr", kd.lr},
        {"batch_size", kd.batch_size},
        {"seed", kd.seed}}},
  };
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(std::string_view text) {
  ExperimentConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("experiment config is not valid JSON: ") + e.what());
  }
  try {
    reject_unknown(j,
                   {"domains", "targets", "classes", "train_per_class", "test_per_class", "seed", "methods",
                    "weight_mode", "arch", "pretrain_domains", "pretrain", "source", "adapt", "kd"},
                   "experiment config");
    read_opt(j, "domains", c.domains);
    read_opt(j, "targets", c.targets);
    read_opt(j, "classes", c.classes);
    read_opt(j, "train_per_class", c.train_per_class);
    read_opt(j, "test_per_class", c.test_per_class);
    read_opt(j, "seed", c.seed);
    read_opt(j, "methods", c.methods);
    if (j.contains("weight_mode")) c.weight_mode = parse_weight_mode(j.at("weight_mode").get<std::string>());
    c.arch.classes = c.classes;
    if (j.contains("arch")) {
      const auto& a = j.at("arch");
      reject_unknown(a, {"widths", "kernel", "stride", "padding"}, "arch");
      read_opt(a, "widths", c.arch.widths);
      read_opt(a, "kernel", c.arch.kernel);
      read_opt(a, "stride", c.arch.stride);
      read_opt(a, "padding", c.arch.padding);
    }
    read_opt(j, "pretrain_domains", c.pretrain_domains);
    if (j.contains("pretrain")) read_train(j.at("pretrain"), "pretrain", c.pretrain);
    if (j.contains("source")) read_train(j.at("source"), "source", c.source);
    if (j.contains("adapt")) {
      const auto& a = j.at("adapt");
      reject_unknown(a,
                     {"epochs", "lr", "batch_size", "pl_weight", "im_diversity_weight", "refresh_interval",
                      "weight_refresh_interval", "criterion", "reweight", "train_heads", "head_lr_multiplier", "seed"},
                     "adapt");
      read_opt(a, "epochs", c.adapt.epochs);
      read_opt(a, "lr", c.adapt.lr);
      read_opt(a, "batch_size", c.adapt.batch_size);
      read_opt(a, "pl_weight", c.adapt.pl_weight);
      read_opt(a, "im_diversity_weight", c.adapt.im_diversity_weight);
      read_opt(a, "refresh_interval", c.adapt.refresh_interval);
      read_opt(a, "weight_refresh_interval", c.adapt.weight_refresh_interval);
      if (a.contains("criterion")) c.adapt.criterion = parse_criterion(a.at("criterion").get<std::string>());
      read_opt(a, "reweight", c.adapt.reweight);
      read_opt(a, "train_heads", c.adapt.train_heads);
      read_opt(a, "head_lr_multiplier", c.adapt.head_lr_multiplier);
      read_opt(a, "seed", c.adapt.seed);
    }
    if (j.contains("kd")) {
      const auto& k = j.at("kd");
      reject_unknown(k, {"temperature", "epochs", "lr", "batch_size", "seed"}, "kd");
      read_opt(k, "temperature", c.kd.temperature);
      read_opt(k, "epochs", c.kd.epochs);
      read_opt(k, "lr", c.kd.lr);
      read_opt(k, "batch_size", c.kd.batch_size);
      read_opt(k, "seed", c.kd.seed);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ExperimentConfig::fingerprint() const { return bench::fingerprint(to_json()); }

// ---------------------------------------------------------------------------
// Experiment

namespace {

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

SourcePool prepare_sources(const ExperimentConfig& cfg, const Logger& log) {
  cfg.validate();
  std::vector<data::DomainSpec> specs;
  for (const auto& d : cfg.domains) specs.push_back(data::parse_domain(d));
  SourcePool pool;
  pool.domains = data::gen_benchmark(specs, cfg.classes, cfg.train_per_class, cfg.test_per_class, cfg.seed);
  if (!cfg.pretrain_domains.empty()) {
    const auto t0 = std::chrono::steady_clock::now();
    SplitMix64 seeds(cfg.seed ^ 0x5052455452414E00ULL);
    std::vector<data::LabeledSet> parts;
    for (const auto& d : cfg.pretrain_domains) {
      data::DomainSpec spec = data::parse_domain(d);
      spec.per_class = cfg.train_per_class;
      spec.seed = seeds.next();
      parts.push_back(data::gen_domain(spec, cfg.classes));
    }
    pool.pretrained = train_source<float>(data::concat(parts), cfg.arch, cfg.pretrain);
    say(log, "pretrained shared model in " + fixed(seconds_since(t0), 1) + " s");
  }
  for (std::size_t d = 0; d < pool.domains.size(); ++d) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig tc = cfg.source;
    tc.seed = cfg.source.seed + d;
    pool.models.push_back(pool.pretrained ? train_supervised<float>(*pool.pretrained, pool.domains[d].train, tc)
                                          : train_source<float>(pool.domains[d].train, cfg.arch, tc));
    say(log, "trained source model on " + pool.domains[d].spec.label() + " in " + fixed(seconds_since(t0), 1) + " s");
  }
  return pool;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const SourcePool& pool, std::size_t target,
                                const Logger& log) {
  cfg.validate();
  if (target >= pool.domains.size()) throw std::invalid_argument("target index out of range");
  if (pool.models.size() != pool.domains.size()) throw PreconditionError("source pool is incomplete");

  ExperimentResult res;
  res.target = target;
  res.target_name = pool.domains[target].spec.label();
  std::vector<ModelBundle<float>> sources;
  std::vector<NamedSet> source_tests;
  for (std::size_t d = 0; d < pool.domains.size(); ++d) {
    if (d == target) continue;
    sources.push_back(pool.models[d]);
    source_tests.push_back({pool.domains[d].spec.label(), &pool.domains[d].test});
  }
  const NamedSet target_test{res.target_name, &pool.domains[target].test};
  // Adaptation only ever sees the unlabeled target training images.
  const Tensor<float>& target_images = pool.domains[target].train.images;
  const auto wants = [&](std::string_view m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
  };
  PredictOptions<float> popts;
  popts.mode = cfg.weight_mode;
  popts.criterion = cfg.adapt.criterion;

  const ModelBundle<float> assembled = assemble<float>(sources);
  res.unadapted_target_acc =
      evaluate("seprep-unadapted", model_predictor(assembled, popts), flops_count(assembled), {}, target_test)
          .target_acc;

  auto sum_flops = [](const std::vector<ModelBundle<float>>& ms) {
    Flops f;
    for (const auto& m : ms) f += flops_count(m);
    return f;
  };

  if (wants("source-ens")) {
    res.rows.push_back(evaluate("source-ens", ensemble_predictor(sources), sum_flops(sources), source_tests, target_test));
  }

  if (wants("shot-ens") || wants("shot-ens+kd")) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<ModelBundle<float>> adapted;
    for (std::size_t k = 0; k < sources.size(); ++k) {
      AdaptConfig ac = cfg.adapt;
      ac.seed = cfg.adapt.seed + k;
      adapted.push_back(adapt_single(sources[k], target_images, ac));
    }
    say(log, "adapted " + std::to_string(adapted.size()) + " single models in " + fixed(seconds_since(t0), 1) + " s");
    if (wants("shot-ens")) {
      res.rows.push_back(evaluate("shot-ens", ensemble_predictor(adapted), sum_flops(adapted), source_tests, target_test));
    }
    if (wants("shot-ens+kd")) {
      t0 = std::chrono::steady_clock::now();
      ModelBundle<float> student = pool.pretrained ? *pool.pretrained : init_model<float>(cfg.arch, cfg.source.init_seed);
      student = kd_distill<float>(ensemble_teacher<float>(adapted), std::move(student), target_images, cfg.kd);
      say(log, "distilled student in " + fixed(seconds_since(t0), 1) + " s");
      res.rows.push_back(
          evaluate("shot-ens+kd", model_predictor(student, popts), flops_count(student), source_tests, target_test));
    }
  }

  if (wants("seprep") || wants("seprep-unfused")) {
    const auto t0 = std::chrono::steady_clock::now();
    AdaptResult<float> ar = adapt(assembled, target_images, cfg.adapt);
    res.loss_weights = ar.loss_weights;
    say(log, "adapted assembled model in " + fixed(seconds_since(t0), 1) + " s");
    if (wants("seprep")) {
      const ModelBundle<float> fused = fuse_model(ar.model);
      res.rows.push_back(evaluate("seprep", model_predictor(fused, popts), flops_count(fused), source_tests, target_test));
    }
    if (wants("seprep-unfused")) {
      res.rows.push_back(evaluate("seprep-unfused", model_predictor(ar.model, popts), flops_count(ar.model),
                                  source_tests, target_test));
    }
  }
  return res;
}

const EvalReport* find_row(const ExperimentResult& result, std::string_view method) {
  for (const auto& r : result.rows) {
    if (r.method == method) return &r;
  }
  return nullptr;
}

std::string table_text(const ExperimentResult& result) {
  std::ostringstream os;
  char line[160];
  os << "target " << result.target_name << " (assembled, unadapted T = " << fixed(result.unadapted_target_acc, 2)
     << ")\n";
  std::snprintf(line, sizeof line, "%-16s %8s %8s %8s %14s\n", "method", "S", "T", "H", "FLOPs");
  os << line;
  for (const auto& r : result.rows) {
    std::snprintf(line, sizeof line, "%-16s %8.2f %8.2f %8.2f %14llu\n", r.method.c_str(), r.source_mean,
                  r.target_acc, r.h, static_cast<unsigned long long>(r.flops.total));
    os << line;
  }
  return os.str();
}

std::string results_csv(std::span<const ExperimentResult> results) {
  std::ostringstream os;
  os << EvalReport::csv_header() << '\n';
  for (const auto& res : results) {
    for (const auto& r : res.rows) os << r.to_csv_row() << '\n';
  }
  return os.str();
}

std::string results_json(std::span<const ExperimentResult> results, const ExperimentConfig& cfg) {
  json out = {{"config_fingerprint", cfg.fingerprint()}, {"results", json::array()}};
  for (const auto& res : results) {
    json rows = json::array();
    for (const auto& r : res.rows) rows.push_back(report_json(r, true));
    out["results"].push_back({{"target", res.target_name},
                              {"unadapted_target_accuracy", res.unadapted_target_acc},
                              {"loss_weights", res.loss_weights},
                              {"rows", rows}});
  }
  return out.dump(2);
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const SourcePool& pool, std::size_t target,
                                      const Logger& log) {
  cfg.validate();
  if (target >= pool.domains.size()) throw std::invalid_argument("target index out of range");
  std::vector<ModelBundle<float>> sources;
  std::vector<NamedSet> source_tests;
  for (std::size_t d = 0; d < pool.domains.size(); ++d) {
    if (d == target) continue;
    sources.push_back(pool.models[d]);
    source_tests.push_back({pool.domains[d].spec.label(), &pool.domains[d].test});
  }
  const NamedSet target_test{pool.domains[target].spec.label(), &pool.domains[target].test};
  const ModelBundle<float> assembled = assemble<float>(sources);
  std::vector<AblationRow> rows;
  for (Criterion c : {Criterion::entropy, Criterion::confidence, Criterion::margin}) {
    const auto t0 = std::chrono::steady_clock::now();
    AdaptConfig ac = cfg.adapt;
    ac.criterion = c;
    AdaptResult<float> ar = adapt(assembled, pool.domains[target].train.images, ac);
    const ModelBundle<float> fused = fuse_model(ar.model);
    PredictOptions<float> popts;
    popts.mode = cfg.weight_mode;
    popts.criterion = c;
    AblationRow row;
    row.criterion = c;
    row.loss_weights = ar.loss_weights;
    row.report = evaluate("seprep/" + std::string(criterion_name(c)), model_predictor(fused, popts),
                          flops_count(fused), source_tests, target_test);
    say(log, "criterion " + std::string(criterion_name(c)) + " done in " + fixed(seconds_since(t0), 1) + " s");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_text(std::span<const AblationRow> rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %8s %8s %8s\n", "criterion", "S", "T", "H");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-12s %8.2f %8.2f %8.2f\n", std::string(criterion_name(r.criterion)).c_str(),
                  r.report.source_mean, r.report.target_acc, r.report.h);
    os << line;
  }
  return os.str();
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "criterion,S,T,H,loss_weights\n";
  for (const auto& r : rows) {
    os << criterion_name(r.criterion) << ',' << fixed(r.report.source_mean, 4) << ',' << fixed(r.report.target_acc, 4)
       << ',' << fixed(r.report.h, 4) << ',';
    for (std::size_t i = 0; i < r.loss_weights.size(); ++i) os << (i ? ";" : "") << fixed(r.loss_weights[i], 6);
    os << '\n';
  }
  return os.str();
}

}  // namespace seprep::bench
