// nullmargin: command-line front end for the semi-supervised metric learning pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nullmargin/nullmargin.hpp"

namespace fs = std::filesystem;
using namespace nullmargin;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numerical: return "numerical";
  }
  return "unknown";
}

int report_error(const std::string& kind, const std::string& message, int code) {
  nlohmann::json j;
  j["error"] = {{"kind", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << '\n';
  return code;
}

FeatureTable load_table(const std::string& path, const std::string& format = "auto") {
  if (format == "csv") return load_feature_table(path, TableFormat::csv);
  if (format == "binary") return load_feature_table(path, TableFormat::binary);
  return load_feature_table(path);
}

TableFormat format_for_output(const std::string& path, const std::string& format) {
  if (format == "csv") return TableFormat::csv;
  if (format == "binary") return TableFormat::binary;
  return fs::path(path).extension() == ".csv" ? TableFormat::csv : TableFormat::binary;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + p.string() + "' for writing");
  return out;
}

std::vector<std::size_t> parse_ranks(const std::string& s) {
  RunConfig tmp;
  tmp.set("eval.ranks", s);
  return tmp.ranks;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  SyntheticSpec spec;
  std::string output;
  std::string format = "auto";
};

int cmd_synth(const SynthArgs& a) {
  const auto table = generate_synthetic(a.spec);
  save_feature_table(table, a.output, format_for_output(a.output, a.format));
  std::cout << "rows=" << table.size() << " dim=" << table.dim() << " checksum=" << hex64(table_checksum(table)) << '\n';
  return 0;
}

nlohmann::json trial_json(const TrialResult& t) {
  nlohmann::json j;
  j["trial"] = t.trial;
  j["split_seed"] = hex64(t.split_seed);
  j["probes"] = t.probes;
  j["gallery"] = t.gallery;
  j["labeled_identities"] = t.labeled_identities;
  j["unlabeled_samples"] = t.unlabeled_samples;
  j["model_checksum"] = hex64(t.model_checksum);
  j["resolved_bandwidth"] = t.resolved_bandwidth;
  j["output_dim"] = t.output_dim;
  j["mining_rounds"] = t.trace.mining_rounds();
  j["stop_reason"] = t.trace.stop_reason;
  j["pseudo_classes_accepted"] = t.accepted.size();
  j["cmc"] = to_json(t.curve);
  return j;
}

nlohmann::json write_mode_outputs(const RunConfig& cfg, const ProtocolResult& res, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "cmc.csv");
    write_cmc_csv(out, res.mean);
  }
  {
    auto out = open_out(dir / "trace.jsonl");
    for (const auto& t : res.trials) {
      if (res.mode == Mode::semi_supervised) {
        write_trace_jsonl(out, t.trace, t.trial);
      } else {
        IterationRecord r;
        r.labeled_classes = t.labeled_identities;
        r.resolved_bandwidth = t.resolved_bandwidth;
        r.model_checksum = t.model_checksum;
        auto j = to_json(r);
        j["trial"] = t.trial;
        out << j.dump() << '\n';
      }
    }
  }
  if (res.first_model) save_model(*res.first_model, (dir / "model.nk3m").string());
  if (res.mode == Mode::semi_supervised && !res.trials.empty()) {
    auto out = open_out(dir / "pseudo_classes.csv");
    write_pseudo_classes_csv(out, res.trials.front().accepted);
  }

  nlohmann::json report;
  report["mode"] = to_string(res.mode);
  report["config"] = cfg.to_json();
  report["derivation"] = {{"split_seed", "derive_seed(run.seed, \"split\", trial)"},
                          {"single_shot_seed", "derive_seed(run.seed, \"single_shot\", trial)"}};
  report["cmc"] = to_json(res.mean);
  report["rank1"] = res.mean.ranks.empty() ? 0.0 : res.mean.ranks.front().accuracy;
  report["trials_averaged"] = res.mean.trials_averaged;
  auto trials = nlohmann::json::array();
  for (const auto& t : res.trials) trials.push_back(trial_json(t));
  report["trials"] = trials;
  if (res.first_model) {
    report["model_file"] = "model.nk3m";
    report["model_checksum"] = hex64(model_checksum(*res.first_model));
  }
  auto out = open_out(dir / "report.json");
  out << report.dump(2) << '\n';
  return report;
}

int cmd_run(RunConfig cfg) {
  cfg.validate();
  const auto table = load_table(cfg.input, cfg.format);
  const auto modes = cfg.modes();
  const fs::path root(cfg.output_dir);
  fs::create_directories(root);

  ProtocolOptions opts;
  opts.ranks = cfg.ranks;
  opts.threads = cfg.threads;

  std::map<std::string, nlohmann::json> reports;
  for (auto mode : modes) {
    const auto res = run_protocol(table, cfg.split, cfg.loop, mode, opts);
    const auto dir = modes.size() > 1 ? root / to_string(mode) : root;
    reports[to_string(mode)] = write_mode_outputs(cfg, res, dir);
    std::cout << to_string(mode) << ": rank1=" << detail::format_double(res.mean.ranks.front().accuracy)
              << " (" << cfg.split.trials << " trials)\n";
  }
  if (modes.size() > 1) {
    nlohmann::json cmp;
    const auto& lo = reports.at("labeled_only");
    const auto& ss = reports.at("semi_supervised");
    cmp["labeled_only_rank1"] = lo["rank1"];
    cmp["semi_supervised_rank1"] = ss["rank1"];
    cmp["rank1_gain"] = ss["rank1"].get<double>() - lo["rank1"].get<double>();
    auto gains = nlohmann::json::array();
    for (std::size_t i = 0; i < lo["cmc"].size(); ++i)
      gains.push_back({{"N", lo["cmc"][i]["N"]},
                       {"gain", ss["cmc"][i]["accuracy"].get<double>() - lo["cmc"][i]["accuracy"].get<double>()}});
    cmp["gain_by_rank"] = gains;
    auto out = open_out(root / "comparison.json");
    out << cmp.dump(2) << '\n';
  }
  return 0;
}

int cmd_embed(const std::string& model_path, const std::string& data_path, const std::string& output) {
  const auto model = load_model(model_path);
  const auto table = load_table(data_path);
  if (table.dim() != model.input_dim())
    throw DimensionMismatch(static_cast<std::size_t>(model.input_dim()), static_cast<std::size_t>(table.dim()), "embed");
  std::ostringstream os;
  os << "sample_id";
  for (Index k = 0; k < model.output_dim(); ++k) os << ",e" << k;
  os << '\n';
  if (!table.empty()) {
    const RowMatrix e = embed_rows(model, table.features());
    for (std::size_t i = 0; i < table.size(); ++i) {
      os << table.info(i).sample_id;
      for (Index k = 0; k < e.cols(); ++k) os << ',' << detail::format_double(e(static_cast<Index>(i), k));
      os << '\n';
    }
  }
  if (output.empty() || output == "-") std::cout << os.str();
  else detail::write_file(output, os.str());
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& probe_path, const std::string& gallery_path,
             const std::string& ranks, const std::string& output) {
  const auto model = load_model(model_path);
  const auto probe = load_table(probe_path);
  const auto gallery = load_table(gallery_path);
  auto ns = parse_ranks(ranks);
  if (ns.empty()) {
    ns.resize(gallery.size());
    std::iota(ns.begin(), ns.end(), std::size_t{1});
  }
  const auto curve = cmc(rank_gallery(model, probe, gallery), identities_of(probe), identities_of(gallery), ns);
  std::ostringstream os;
  write_cmc_csv(os, curve);
  if (output.empty() || output == "-") std::cout << os.str();
  else detail::write_file(output, os.str());
  return 0;
}

int cmd_mine(const std::string& labeled_path, const std::string& unlabeled_path, std::size_t k,
             const KernelSpec& kernel, const std::string& output, const std::string& model_out) {
  const auto labeled = load_table(labeled_path);
  const auto unlabeled = load_table(unlabeled_path).without_identities();
  const auto model = fit_nk3ml(labeled, kernel);
  if (!model_out.empty()) save_model(model, model_out);
  const auto ctx = build_anchor_context(unlabeled, model, kernel);
  const auto pairs = mine_pseudo_classes(ctx, unlabeled, model, k, 0);
  std::ostringstream os;
  write_pseudo_classes_csv(os, pairs);
  if (output.empty() || output == "-") std::cout << os.str();
  else detail::write_file(output, os.str());
  std::cerr << "anchor_camera=" << ctx.anchor_camera << " anchor_identities=" << ctx.anchor_classes.size()
            << " secondary_dim=" << ctx.secondary.output_dim() << " pairs=" << pairs.size() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nullmargin: null-space kernel maximum-margin metric learning with cross-view pseudo-class mining"};
  app.require_subcommand(1);

  // synth
  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic cross-view feature table");
  s->add_option("--identities", synth.spec.identities, "Number of identities")->capture_default_str();
  s->add_option("--cameras", synth.spec.cameras, "Number of cameras")->capture_default_str();
  s->add_option("--dim", synth.spec.dim, "Feature dimension")->capture_default_str();
  s->add_option("--transform-strength", synth.spec.per_camera_transform_strength, "Per-camera linear distortion strength")
      ->capture_default_str();
  s->add_option("--noise", synth.spec.noise_sigma, "Additive noise sigma")->capture_default_str();
  s->add_option("--seed", synth.spec.seed, "Random seed")->capture_default_str();
  s->add_option("-o,--output", synth.output, "Output file (.csv for CSV, otherwise binary)")->required();
  s->add_option("--format", synth.format, "auto|csv|binary")->check(CLI::IsMember({"auto", "csv", "binary"}));

  // run
  auto* r = app.add_subcommand("run", "Run the repeated-split evaluation protocol");
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;
  r->add_option("-c,--config", config_path, "Config file with 'section.key = value' lines");
  const std::vector<std::pair<std::string, std::string>> run_flags = {
      {"--input", "data.input"},          {"--format", "data.format"},
      {"--out", "output.dir"},            {"--mode", "run.mode"},
      {"--seed", "run.seed"},             {"--labeled-fraction", "split.labeled_fraction"},
      {"--trials", "split.trials"},       {"--k", "loop.k"},
      {"--quantile", "loop.quantile"},    {"--max-iterations", "loop.max_iterations"},
      {"--min-new-classes", "loop.min_new_classes"}, {"--kernel", "kernel.kind"},
      {"--bandwidth", "kernel.bandwidth"}, {"--ranks", "eval.ranks"}};
  for (const auto& [flag, key] : run_flags) r->add_option(flag, flag_values[key], "Overrides " + key);
  std::optional<std::size_t> threads;
  r->add_option("--threads", threads, "Worker threads (default: NULLMARGIN_THREADS or 1)");
  r->add_option("--set", sets, "Extra section.key=value overrides");

  // embed
  auto* e = app.add_subcommand("embed", "Embed a feature table with a saved model");
  std::string model_path, data_path, output;
  e->add_option("--model", model_path, "Model file")->required();
  e->add_option("--data", data_path, "Feature table")->required();
  e->add_option("-o,--output", output, "Output CSV (default stdout)");

  // eval
  auto* v = app.add_subcommand("eval", "CMC of a saved model on a probe/gallery pair");
  std::string probe_path, gallery_path, ranks = "1,5,10,20";
  v->add_option("--model", model_path, "Model file")->required();
  v->add_option("--probe", probe_path, "Probe table")->required();
  v->add_option("--gallery", gallery_path, "Gallery table")->required();
  v->add_option("--ranks", ranks, "Comma-separated ranks or 'all'")->capture_default_str();
  v->add_option("-o,--output", output, "Output CSV (default stdout)");

  // mine
  auto* m = app.add_subcommand("mine", "One pseudo-class mining round (debugging)");
  std::string labeled_path, unlabeled_path, kernel_kind = "rbf", bandwidth = "auto", model_out;
  std::size_t k = 1;
  m->add_option("--labeled", labeled_path, "Labeled table")->required();
  m->add_option("--unlabeled", unlabeled_path, "Unlabeled table")->required();
  m->add_option("--k", k, "Reciprocal neighborhood size")->capture_default_str();
  m->add_option("--kernel", kernel_kind, "rbf|linear")->capture_default_str();
  m->add_option("--bandwidth", bandwidth, "auto or a positive number")->capture_default_str();
  m->add_option("--model-out", model_out, "Also save the primary model here");
  m->add_option("-o,--output", output, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    return report_error("config", ex.what(), 2);
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (r->parsed()) {
      RunConfig cfg;
      if (!config_path.empty()) cfg.load_file(config_path);
      for (const auto& [flag, key] : run_flags) {
        auto* opt = r->get_option(flag);
        if (opt->count() > 0) cfg.set(key, flag_values[key]);
      }
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
        cfg.set(std::string(detail::trim(kv.substr(0, eq))), kv.substr(eq + 1));
      }
      if (threads || !cfg.threads_explicit) cfg.threads = resolve_threads(threads);
      return cmd_run(cfg);
    }
    if (e->parsed()) return cmd_embed(model_path, data_path, output);
    if (v->parsed()) return cmd_eval(model_path, probe_path, gallery_path, ranks, output);
    if (m->parsed()) {
      KernelSpec kernel;
      kernel.kind = parse_kernel_kind(kernel_kind);
      if (bandwidth != "auto") {
        const auto bw = detail::parse_number<double>(bandwidth);
        if (!bw) throw ConfigError("--bandwidth expects 'auto' or a number");
        kernel.bandwidth = *bw;
      }
      kernel.validate();
      return cmd_mine(labeled_path, unlabeled_path, k, kernel, output, model_out);
    }
  } catch (const Error& ex) {
    return report_error(kind_name(ex.kind()), ex.what(), exit_code(ex.kind()));
  } catch (const fs::filesystem_error& ex) {
    return report_error("data", ex.what(), 3);
  } catch (const std::exception& ex) {
    return report_error("internal", ex.what(), 1);
  }
  return 0;
}
