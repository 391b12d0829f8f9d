// Command-line workflow: generate data, train source models, assemble, adapt,
// fuse, evaluate, count FLOPs and run the comparison experiments. Commands
// communicate only through checkpoint files.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "seprep/adapt.hpp"
#include "seprep/bench.hpp"
#include "seprep/ckpt.hpp"
#include "seprep/data.hpp"
#include "seprep/nn.hpp"
#include "seprep/reparam.hpp"
#include "seprep/rng.hpp"

namespace fs = std::filesystem;
using namespace seprep;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string precision = "f32";
  std::string out;
};

// Raised for command-line misuse that CLI11 cannot see (missing --out etc.).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string require_out(const Globals& g) {
  if (g.out.empty()) throw UsageError("--out is required for this command");
  return g.out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw ckpt::CkptError(ckpt::Errc::io, "cannot write " + path.string());
  f << text;
}

// Every run records the options it was invoked with and their hash next to
// its outputs.
void write_fingerprint(const CLI::App& app, const CLI::App& sub, const fs::path& where) {
  const std::string cfg = app.config_to_str(true, false) + "\n[" + sub.get_name() + "]\n" + sub.config_to_str(true, false);
  const std::string text = "# fingerprint " + bench::fingerprint(cfg) + "\n" + cfg;
  write_text(where, text);
}

fs::path fingerprint_path_for_file(const fs::path& out) { return fs::path(out.string() + ".config.toml"); }

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ':' || c == '.' || c == '/') c = '_';
  }
  return s;
}

ArchDesc parse_arch(const std::string& text, std::size_t classes) {
  ArchDesc a;
  a.classes = classes;
  a.widths.clear();
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v == 0) throw std::invalid_argument("bad --arch width '" + item + "'");
    a.widths.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  a.validate();
  return a;
}

template <typename M>
struct ScalarOf;
template <typename T>
struct ScalarOf<ModelBundle<T>> {
  using type = T;
};

// Calls fn(ModelBundle<T>) with the checkpoint's stored precision.
template <typename Fn>
void with_model(const std::string& path, Fn&& fn) {
  const auto bytes = ckpt::read_file(path);
  const auto info = ckpt::inspect(bytes);
  if (info.kind != "model") throw ckpt::CkptError(ckpt::Errc::bad_metadata, path + " does not hold a model");
  if (info.precision == ckpt::Precision::f64) {
    fn(ckpt::decode_model<double>(bytes));
  } else {
    fn(ckpt::decode_model<float>(bytes));
  }
}

template <typename T>
Tensor<T> images_as(const data::LabeledSet& set) {
  if constexpr (std::is_same_v<T, float>) {
    return set.images;
  } else {
    return tensor_cast<T>(set.images);
  }
}

void print_flops(const bench::Flops& f) {
  std::printf("extractor %llu\nheads %llu\ntotal %llu\n", static_cast<unsigned long long>(f.extractor),
              static_cast<unsigned long long>(f.heads), static_cast<unsigned long long>(f.total));
}

bench::ExperimentConfig load_experiment_config(const std::string& path) {
  return bench::ExperimentConfig::from_json(ckpt::read_file(path));
}

void log_line(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-pathway model assembly, source-free adaptation and exact pathway fusion"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--precision", g.precision, "Arithmetic precision of newly created models")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  app.add_option("--out", g.out, "Output file (checkpoints) or directory (data, reports)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic multi-domain benchmark");
  std::string domains = "identity,rotate:25,invert,noise:0.2";
  std::size_t classes = 10;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 200;
  gen->add_option("--domains", domains, "Comma-separated domain list, e.g. identity,rotate:25")->capture_default_str();
  gen->add_option("--classes", classes, "Number of classes")->check(CLI::Range(2, 10))->capture_default_str();
  gen->add_option("--train-per-class", train_per_class)->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--test-per-class", test_per_class)->check(CLI::PositiveNumber)->capture_default_str();

  // train-source
  auto* train = app.add_subcommand("train-source", "Train one source model on a labeled domain");
  std::vector<std::string> domain_files;
  std::string init_file;
  std::string arch_text = "16,32,64";
  TrainConfig tc;
  train->add_option("--domain", domain_files, "Labeled dataset file(s); several are concatenated")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--init", init_file, "Fine-tune this source checkpoint instead of a fresh model")
      ->check(CLI::ExistingFile);
  train->add_option("--arch", arch_text, "Unit widths, e.g. 16,32,64")->capture_default_str();
  train->add_option("--epochs", tc.epochs)->capture_default_str();
  train->add_option("--lr", tc.lr)->check(CLI::NonNegativeNumber)->capture_default_str();
  train->add_option("--batch-size", tc.batch_size)->check(CLI::Range(2, 1 << 20))->capture_default_str();
  train->add_option("--init-seed", tc.init_seed, "Parameter initialization seed")->capture_default_str();

  // assemble
  auto* asmb = app.add_subcommand("assemble", "Assemble K source models into one multi-pathway model");
  std::vector<std::string> source_files;
  asmb->add_option("--sources", source_files, "Source model checkpoints")->required()->check(CLI::ExistingFile);

  // adapt
  auto* adp = app.add_subcommand("adapt", "Adapt an assembled model to unlabeled target data");
  std::string model_file;
  std::string target_file;
  AdaptConfig ac;
  std::string criterion = "entropy";
  adp->add_option("--model", model_file)->required()->check(CLI::ExistingFile);
  adp->add_option("--target", target_file, "Target dataset (labels are ignored)")->required()->check(CLI::ExistingFile);
  adp->add_option("--epochs", ac.epochs)->capture_default_str();
  adp->add_option("--lr", ac.lr)->check(CLI::NonNegativeNumber)->capture_default_str();
  adp->add_option("--pl-weight", ac.pl_weight, "Pseudo-label loss weight")->check(CLI::NonNegativeNumber)->capture_default_str();
  adp->add_option("--criterion", criterion)
      ->check(CLI::IsMember({"entropy", "confidence", "margin"}))
      ->capture_default_str();
  adp->add_option("--weight-refresh", ac.weight_refresh_interval, "Epochs between loss-weight refreshes (0: never)")
      ->capture_default_str();

  // fuse
  auto* fuse = app.add_subcommand("fuse", "Fuse every unit into a single convolution");
  fuse->add_option("--model", model_file)->required()->check(CLI::ExistingFile);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate source and target accuracy, H-score and FLOPs");
  std::vector<std::string> eval_sources;
  std::string weight_mode = "per-batch";
  ev->add_option("--model", model_file)->required()->check(CLI::ExistingFile);
  ev->add_option("--sources", eval_sources, "Source-domain test sets")->check(CLI::ExistingFile);
  ev->add_option("--target", target_file, "Target-domain test set")->required()->check(CLI::ExistingFile);
  ev->add_option("--weight-mode", weight_mode)
      ->check(CLI::IsMember({"per-batch", "per-sample"}))
      ->capture_default_str();
  ev->add_option("--criterion", criterion)
      ->check(CLI::IsMember({"entropy", "confidence", "margin"}))
      ->capture_default_str();

  // flops
  auto* fl = app.add_subcommand("flops", "Print the FLOPs breakdown of a model");
  fl->add_option("--model", model_file)->required()->check(CLI::ExistingFile);

  // experiment / ablate
  auto* exp = app.add_subcommand("experiment", "Run the method comparison from a JSON config");
  std::string config_file;
  exp->add_option("--config", config_file)->required()->check(CLI::ExistingFile);
  auto* abl = app.add_subcommand("ablate", "Compare uncertainty criteria on one target domain");
  std::size_t ablate_target = 3;
  abl->add_option("--config", config_file)->required()->check(CLI::ExistingFile);
  abl->add_option("--target", ablate_target, "Target domain index")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: bad arguments: %s\n", e.what());
    return 1;
  }

  try {
    if (gen->parsed()) {
      const fs::path dir = require_out(g);
      const auto specs = data::parse_domain_list(domains);
      const auto bench_data = data::gen_benchmark(specs, classes, train_per_class, test_per_class, g.seed);
      fs::create_directories(dir);
      for (const auto& d : bench_data) {
        const std::string stem = sanitize(d.spec.label());
        ckpt::save_dataset(d.train, dir / (stem + ".train.sprn"), d.spec.label());
        ckpt::save_dataset(d.test, dir / (stem + ".test.sprn"), d.spec.label());
        std::printf("%s: %zu train, %zu test\n", d.spec.label().c_str(), d.train.size(), d.test.size());
      }
      write_fingerprint(app, *gen, dir / "config.toml");
    } else if (train->parsed()) {
      const fs::path out = require_out(g);
      std::vector<data::LabeledSet> parts;
      for (const auto& f : domain_files) parts.push_back(ckpt::load_dataset(f));
      const auto set = data::concat(parts);
      tc.seed = g.seed;
      if (!init_file.empty()) {
        with_model(init_file, [&](auto model) {
          if (model.form != Form::source) throw PreconditionError("--init must be a single-pathway source model");
          ckpt::save_model(train_supervised(std::move(model), set, tc), out);
        });
      } else {
        const ArchDesc arch = parse_arch(arch_text, std::max<std::size_t>(set.classes(), 2));
        if (g.precision == "f64") {
          ckpt::save_model(train_source<double>(set, arch, tc), out);
        } else {
          ckpt::save_model(train_source<float>(set, arch, tc), out);
        }
      }
      write_fingerprint(app, *train, fingerprint_path_for_file(out));
      std::printf("wrote %s\n", out.string().c_str());
    } else if (asmb->parsed()) {
      const fs::path out = require_out(g);
      const auto first = ckpt::inspect_file(source_files.at(0));
      auto run = [&](auto tag) {
        using T = decltype(tag);
        std::vector<ModelBundle<T>> models;
        for (const auto& f : source_files) models.push_back(ckpt::load_model<T>(f));
        ckpt::save_model(assemble<T>(models), out);
      };
      if (first.precision == ckpt::Precision::f64) {
        run(double{});
      } else {
        run(float{});
      }
      write_fingerprint(app, *asmb, fingerprint_path_for_file(out));
      std::printf("assembled %zu sources into %s\n", source_files.size(), out.string().c_str());
    } else if (adp->parsed()) {
      const fs::path out = require_out(g);
      ac.criterion = parse_criterion(criterion);
      ac.seed = g.seed;
      const auto target = ckpt::load_dataset(target_file);
      with_model(model_file, [&](auto model) {
        using T = typename ScalarOf<decltype(model)>::type;
        const auto images = images_as<T>(target);
        const auto res = adapt(model, images, ac);
        ckpt::save_model(res.model, out);
        std::printf("loss weights:");
        for (auto w : res.loss_weights) std::printf(" %.6f", static_cast<double>(w));
        std::printf("\n");
        if (!res.epoch_loss.empty()) std::printf("final epoch loss %.6f\n", res.epoch_loss.back());
      });
      write_fingerprint(app, *adp, fingerprint_path_for_file(out));
    } else if (fuse->parsed()) {
      const fs::path out = require_out(g);
      with_model(model_file, [&](auto model) {
        using T = typename ScalarOf<decltype(model)>::type;
        const auto fused = fuse_model(model);
        SplitMix64 rng(g.seed);
        Tensor<T> probes(model.arch.input_shape(64));
        for (std::size_t i = 0; i < probes.size(); ++i) probes[i] = static_cast<T>(rng.uniform());
        const auto a = infer(model, probes);
        const auto b = infer(fused, probes);
        double dev = 0;
        for (std::size_t h = 0; h < a.logits.size(); ++h) {
          dev = std::max(dev, static_cast<double>(max_abs_diff(a.logits[h], b.logits[h])));
        }
        ckpt::save_model(fused, out);
        std::printf("max logit deviation over 64 probes: %.3e\n", dev);
      });
      write_fingerprint(app, *fuse, fingerprint_path_for_file(out));
    } else if (ev->parsed()) {
      std::vector<data::LabeledSet> sets;
      for (const auto& f : eval_sources) sets.push_back(ckpt::load_dataset(f));
      const auto target = ckpt::load_dataset(target_file);
      std::vector<bench::NamedSet> named;
      for (std::size_t i = 0; i < sets.size(); ++i) named.push_back({fs::path(eval_sources[i]).filename().string(), &sets[i]});
      bench::EvalReport report;
      with_model(model_file, [&](auto model) {
        using T = typename ScalarOf<decltype(model)>::type;
        PredictOptions<T> popts;
        popts.mode = parse_weight_mode(weight_mode);
        popts.criterion = parse_criterion(criterion);
        report = bench::evaluate(std::string(form_name(model.form)), bench::model_predictor(model, popts),
                                 bench::flops_count(model), named,
                                 {fs::path(target_file).filename().string(), &target});
      });
      std::printf("%s\n", report.to_json().c_str());
      if (!g.out.empty()) {
        const fs::path dir = g.out;
        write_text(dir / "report.json", report.to_json() + "\n");
        write_text(dir / "report.csv", bench::EvalReport::csv_header() + "\n" + report.to_csv_row() + "\n");
        write_fingerprint(app, *ev, dir / "config.toml");
      }
    } else if (fl->parsed()) {
      with_model(model_file, [&](auto model) {
        std::printf("form %s, K %zu\n", std::string(form_name(model.form)).c_str(), model.k());
        print_flops(bench::flops_count(model));
      });
    } else if (exp->parsed()) {
      auto cfg = load_experiment_config(config_file);
      const auto pool = bench::prepare_sources(cfg, log_line);
      std::vector<bench::ExperimentResult> results;
      for (std::size_t t : cfg.targets) {
        results.push_back(bench::run_experiment(cfg, pool, t, log_line));
        std::printf("%s\n", bench::table_text(results.back()).c_str());
      }
      if (!g.out.empty()) {
        const fs::path dir = g.out;
        write_text(dir / "results.csv", bench::results_csv(results));
        write_text(dir / "results.json", bench::results_json(results, cfg) + "\n");
        write_text(dir / "experiment.json", cfg.to_json() + "\n");
        write_fingerprint(app, *exp, dir / "config.toml");
      }
    } else if (abl->parsed()) {
      auto cfg = load_experiment_config(config_file);
      if (ablate_target >= cfg.domains.size()) throw UsageError("--target index out of range");
      const auto pool = bench::prepare_sources(cfg, log_line);
      const auto rows = bench::run_ablation(cfg, pool, ablate_target, log_line);
      std::printf("target %s\n%s", cfg.domains[ablate_target].c_str(), bench::ablation_text(rows).c_str());
      if (!g.out.empty()) {
        const fs::path dir = g.out;
        write_text(dir / "ablation.csv", bench::ablation_csv(rows));
        write_fingerprint(app, *abl, dir / "config.toml");
      }
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: bad arguments: %s\n", e.what());
    return 1;
  } catch (const ckpt::CkptError& e) {
    std::fprintf(stderr, "error: bad checkpoint: %s\n", e.what());
    return 1;
  } catch (const PreconditionError& e) {
    std::fprintf(stderr, "error: precondition violated: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: invalid input: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
