#pragma once

// Experiment configuration: flat "section.key = value" text, '#' comments.

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nullmargin/dataio.hpp"
#include "nullmargin/detail/text.hpp"
#include "nullmargin/eval.hpp"
#include "nullmargin/selftrain.hpp"

namespace nullmargin {

struct RunConfig {
  std::string input;
  std::string format = "auto";  // auto | csv | binary
  std::string output_dir = "out";
  std::string mode = "semi_supervised";  // labeled_only | semi_supervised | both
  std::size_t threads = 1;
  bool threads_explicit = false;
  SplitSpec split;
  LoopConfig loop;
  std::vector<std::size_t> ranks;  // empty = full curve

  /// Applies one key; unknown keys and malformed values are ConfigErrors.
  void set(const std::string& key, const std::string& raw) {
    const auto value = std::string(detail::trim(raw));
    const auto bad = [&](const char* what) { return ConfigError("config '" + key + "': " + what + " (got '" + value + "')"); };
    const auto uint = [&] {
      const auto v = detail::parse_number<std::uint64_t>(value);
      if (!v) throw bad("expected a non-negative integer");
      return *v;
    };
    const auto real = [&] {
      const auto v = detail::parse_number<double>(value);
      if (!v) throw bad("expected a number");
      return *v;
    };

    if (key == "data.input") input = value;
    else if (key == "data.format") {
      if (value != "auto" && value != "csv" && value != "binary") throw bad("expected auto, csv or binary");
      format = value;
    } else if (key == "output.dir") output_dir = value;
    else if (key == "run.mode") {
      if (value != "both") parse_mode(value);
      mode = value;
    } else if (key == "run.seed") {
      split.seed = uint();
      loop.seed = split.seed;
    } else if (key == "run.threads") {
      threads = uint();
      if (threads < 1) throw bad("must be at least 1");
      threads_explicit = true;
    } else if (key == "split.labeled_fraction") split.labeled_fraction = Fraction::parse(value);
    else if (key == "split.trials") split.trials = uint();
    else if (key == "loop.k") loop.k = uint();
    else if (key == "loop.quantile") loop.quantile = real();
    else if (key == "loop.max_iterations") loop.max_iterations = uint();
    else if (key == "loop.min_new_classes") loop.min_new_classes = uint();
    else if (key == "kernel.kind") loop.kernel.kind = parse_kernel_kind(value);
    else if (key == "kernel.bandwidth") {
      if (value == "auto") loop.kernel.bandwidth.reset();
      else loop.kernel.bandwidth = real();
    } else if (key == "eval.ranks") {
      ranks.clear();
      if (value != "all")
        for (auto part : detail::split(value, ',')) {
          const auto v = detail::parse_number<std::size_t>(part);
          if (!v || *v < 1) throw bad("expected a comma-separated list of ranks >= 1, or 'all'");
          ranks.push_back(*v);
        }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }

  void load_text(std::string_view text) {
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected 'section.key = value'");
      set(std::string(detail::trim(line.substr(0, eq))), std::string(line.substr(eq + 1)));
    }
  }

  void load_file(const std::string& path) {
    std::string text;
    try {
      text = detail::read_file(path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    load_text(text);
  }

  void validate() const {
    split.validate();
    loop.validate();
    if (input.empty()) throw ConfigError("data.input is required");
    if (threads < 1) throw ConfigError("run.threads must be at least 1");
  }

  std::vector<Mode> modes() const {
    if (mode == "both") return {Mode::labeled_only, Mode::semi_supervised};
    return {parse_mode(mode)};
  }

  /// Every resolved setting, enough to rerun the experiment.
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["data.input"] = input;
    j["data.format"] = format;
    j["output.dir"] = output_dir;
    j["run.mode"] = mode;
    j["run.seed"] = split.seed;
    j["run.threads"] = threads;
    j["split.labeled_fraction"] = split.labeled_fraction.str();
    j["split.trials"] = split.trials;
    j["loop.k"] = loop.k;
    j["loop.quantile"] = loop.quantile;
    j["loop.max_iterations"] = loop.max_iterations;
    j["loop.min_new_classes"] = loop.min_new_classes;
    j["kernel.kind"] = to_string(loop.kernel.kind);
    j["kernel.bandwidth"] = loop.kernel.bandwidth ? nlohmann::json(*loop.kernel.bandwidth) : nlohmann::json("auto");
    if (ranks.empty()) j["eval.ranks"] = "all";
    else j["eval.ranks"] = ranks;
    return j;
  }
};

/// --threads, else NULLMARGIN_THREADS, else 1.
inline std::size_t resolve_threads(std::optional<std::size_t> flag) {
  if (flag) return std::max<std::size_t>(*flag, 1);
  if (const char* env = std::getenv("NULLMARGIN_THREADS")) {
    const auto v = detail::parse_number<std::size_t>(env);
    if (!v || *v < 1) throw ConfigError("NULLMARGIN_THREADS must be a positive integer");
    return *v;
  }
  return 1;
}

}  // namespace nullmargin
