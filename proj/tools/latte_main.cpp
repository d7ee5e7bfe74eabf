#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "latte/analysis.hpp"
#include "latte/config.hpp"
#include "latte/train.hpp"
#include "latte/verify.hpp"

namespace {

using latte::CostReport;
using latte::ModelConfig;
using nlohmann::json;

struct VariantRow {
  int variant;
  int layers;
  int64_t params;
  double flops;
};

json rows_to_json(const std::vector<VariantRow>& rows) {
  json out = json::array();
  const VariantRow* v1 = nullptr;
  for (const auto& r : rows) {
    if (r.variant == 1) v1 = &r;
  }
  for (const auto& r : rows) {
    json e;
    e["variant"] = r.variant;
    e["layers"] = r.layers;
    e["params"] = r.params;
    e["flops"] = r.flops;
    if (v1) {
      e["params_ratio"] = static_cast<double>(r.params) / static_cast<double>(v1->params);
      e["flops_ratio"] = r.flops / v1->flops;
    }
    out.push_back(e);
  }
  return out;
}

void print_rows_text(const std::vector<VariantRow>& rows) {
  const VariantRow* v1 = nullptr;
  for (const auto& r : rows) {
    if (r.variant == 1) v1 = &r;
  }
  std::printf("%-8s %-7s %-14s %-14s %-12s %-12s\n", "variant", "layers", "params(M)",
              "flops(G)", "params/v1", "flops/v1");
  for (const auto& r : rows) {
    const double pm = static_cast<double>(r.params) / 1e6;
    const double fg = r.flops / 1e9;
    if (v1) {
      std::printf("%-8d %-7d %-14.6f %-14.6f %-12.6f %-12.6f\n", r.variant, r.layers, pm, fg,
                  static_cast<double>(r.params) / static_cast<double>(v1->params),
                  r.flops / v1->flops);
    } else {
      std::printf("%-8d %-7d %-14.6f %-14.6f %-12s %-12s\n", r.variant, r.layers, pm, fg, "-",
                  "-");
    }
  }
}

std::vector<int> parse_variants(const std::string& spec) {
  std::vector<int> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    const int v = std::stoi(tok);
    if (v < 1 || v > 4) throw latte::ConfigError("variant id must be 1..4, got " + tok);
    out.push_back(v);
  }
  if (out.empty()) throw latte::ConfigError("no variants given");
  return out;
}

int cmd_analyze(const std::string& config_path, const std::string& paper_preset,
                const std::string& variants_spec, const std::string& format) {
  std::vector<VariantRow> rows;
  if (!paper_preset.empty()) {
    for (int v : parse_variants(variants_spec)) {
      ModelConfig cfg = latte::paper_config(paper_preset, v);
      CostReport rep = latte::estimate_flops(cfg);
      rows.push_back({v, cfg.layers, rep.params, rep.flops_forward});
    }
  } else {
    latte::RunConfig rc = latte::load_run_config(config_path);
    for (int v : parse_variants(variants_spec)) {
      ModelConfig cfg = rc.model;
      cfg.variant = v;
      CostReport rep = latte::estimate_flops(cfg);
      rows.push_back({v, cfg.layers, rep.params, rep.flops_forward});
    }
  }
  if (format == "json") {
    json out;
    out["variants"] = rows_to_json(rows);
    std::cout << out.dump(2) << "\n";
  } else {
    print_rows_text(rows);
  }
  return 0;
}

int cmd_verify(const std::string& filter) {
  auto results = latte::run_verification(filter);
  if (results.empty()) {
    std::cout << "no suites match filter '" << filter << "'\n";
    return 1;
  }
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << "\n";
    for (const auto& f : r.failures) {
      std::cout << "  " << f << "\n";
      ok = false;
    }
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  latte::set_precision(latte::precision_from_env());

  CLI::App app{"latent video diffusion transformer: training, sampling, cost analysis"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  std::string train_config, resume;
  train->add_option("--config", train_config, "path to run config")->required();
  train->add_option("--resume", resume, "raw checkpoint directory to resume from");

  auto* sample = app.add_subcommand("sample", "generate clips from a checkpoint");
  std::string ckpt, sample_out = "samples";
  int count = 1;
  uint64_t seed = 0;
  bool raw = false;
  sample->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  sample->add_option("--count", count, "number of clips");
  sample->add_option("--seed", seed, "sampling seed");
  sample->add_option("--out", sample_out, "output directory");
  sample->add_flag("--raw", raw, "use raw weights even when an EMA sibling exists");

  auto* analyze = app.add_subcommand("analyze", "parameter/FLOP cost model");
  std::string an_config, paper, variants = "1,2,3,4", format = "text";
  analyze->add_option("--config", an_config, "path to run config");
  analyze->add_option("--paper-config", paper, "paper-scale preset: s, b, l or xl");
  analyze->add_option("--variants", variants, "comma-separated variant ids");
  analyze->add_option("--format", format, "text or json")
      ->check(CLI::IsMember({"text", "json"}));

  auto* verify = app.add_subcommand("verify", "run the verification suites");
  std::string filter;
  verify->add_option("--filter", filter, "only run suites whose name contains this");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      latte::RunConfig cfg = latte::load_run_config(train_config);
      latte::TrainResult res = latte::train_run(cfg, resume);
      std::cout << "trained to step " << res.end_step << ", checkpoint " << res.ckpt_dir
                << "\n";
      return 0;
    }
    if (sample->parsed()) {
      latte::SampleResult res = latte::sample_run(ckpt, count, seed, sample_out, !raw);
      std::cout << "wrote " << res.coherence.size() << " clips, mean coherence "
                << res.mean_coherence << ", report " << res.report_path << "\n";
      return 0;
    }
    if (analyze->parsed()) {
      if (an_config.empty() == paper.empty()) {
        std::cerr << "analyze: give exactly one of --config or --paper-config\n";
        return 2;
      }
      return cmd_analyze(an_config, paper, variants, format);
    }
    if (verify->parsed()) return cmd_verify(filter);
  } catch (const latte::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const latte::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const latte::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
