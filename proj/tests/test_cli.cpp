#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nullmargin/nullmargin.hpp"

namespace fs = std::filesystem;
using namespace nullmargin;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(NULLMARGIN_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("nullmargin_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string at(const std::string& name) const { return (dir / name).string(); }
  fs::path dir;
};

}  // namespace

TEST_F(Cli, SynthWritesRowsAndStableChecksum) {
  const auto a = run("synth --identities 100 --cameras 2 --dim 200 --seed 7 -o " + at("data.ssml"));
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(load_feature_table(at("data.ssml")).size(), 200u);
  const auto b = run("synth --identities 100 --cameras 2 --dim 200 --seed 7 -o " + at("again.ssml"));
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("checksum="), std::string::npos);
}

TEST_F(Cli, SynthRejectsOneIdentity) {
  const auto r = run("synth --identities 1 -o " + at("x.ssml"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("\"config\""), std::string::npos);
}

TEST_F(Cli, RunLabeledOnlyReport) {
  ASSERT_EQ(run("synth --identities 30 --dim 60 --seed 1 -o " + at("d.csv")).code, 0);
  const auto r = run("run --input " + at("d.csv") + " --mode labeled_only --trials 2 --out " + at("out"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto report = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
  EXPECT_TRUE(report.contains("rank1"));
  EXPECT_EQ(report["config"]["split.trials"], 2);
  EXPECT_TRUE(fs::exists(dir / "out" / "cmc.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "model.nk3m"));
  EXPECT_NO_THROW(load_model(at("out/model.nk3m")));
}

TEST_F(Cli, RunSemiSupervisedTrace) {
  ASSERT_EQ(run("synth --identities 30 --dim 60 --seed 2 -o " + at("d.ssml")).code, 0);
  const auto r = run("run --input " + at("d.ssml") + " --trials 1 --out " + at("out"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream trace(slurp(dir / "out" / "trace.jsonl"));
  std::size_t lines = 0;
  for (std::string l; std::getline(trace, l);) lines += l.empty() ? 0 : 1;
  EXPECT_GE(lines, 1u);
  EXPECT_EQ(slurp(dir / "out" / "pseudo_classes.csv").rfind("iteration,anchor_camera,anchor_id", 0), 0u);
}

TEST_F(Cli, RunBothWritesComparison) {
  ASSERT_EQ(run("synth --identities 30 --dim 60 --seed 3 -o " + at("d.ssml")).code, 0);
  const auto r = run("run --input " + at("d.ssml") + " --mode both --trials 2 --ranks 1,5 --out " + at("out"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto cmp = nlohmann::json::parse(slurp(dir / "out" / "comparison.json"));
  const auto lo = nlohmann::json::parse(slurp(dir / "out" / "labeled_only" / "report.json"));
  const auto ss = nlohmann::json::parse(slurp(dir / "out" / "semi_supervised" / "report.json"));
  EXPECT_DOUBLE_EQ(cmp["rank1_gain"].get<double>(), ss["rank1"].get<double>() - lo["rank1"].get<double>());
}

TEST_F(Cli, ConfigFileAndFlagOverride) {
  ASSERT_EQ(run("synth --identities 20 --dim 40 --seed 4 -o " + at("d.ssml")).code, 0);
  std::ofstream(at("exp.cfg")) << "data.input = " << at("d.ssml") << "\nrun.mode = labeled_only\nsplit.trials = 3\n";
  const auto r = run("run -c " + at("exp.cfg") + " --trials 1 --out " + at("out"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto report = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
  EXPECT_EQ(report["config"]["split.trials"], 1);
  EXPECT_EQ(report["trials"].size(), 1u);
}

TEST_F(Cli, ErrorExitCodes) {
  EXPECT_EQ(run("run --input " + at("missing.csv") + " --out " + at("o")).code, 3);
  EXPECT_EQ(run("run --input x --set loop.kk=1").code, 2);
  std::ofstream(at("bad.csv")) << "sample_id,camera_id,identity,within_view_id,f0\na,0,1,1,1,2\n";
  EXPECT_EQ(run("run --input " + at("bad.csv") + " --out " + at("o")).code, 3);
}

TEST_F(Cli, EmbedCollapsesTrainingClasses) {
  SyntheticSpec spec;
  spec.identities = 10;
  spec.dim = 40;
  spec.noise_sigma = 0.2;
  const auto t = generate_synthetic(spec);
  save_feature_table(t, at("train.ssml"), TableFormat::binary);
  save_model(fit_nk3ml(t, {}), at("m.nk3m"));
  const auto r = run("embed --model " + at("m.nk3m") + " --data " + at("train.ssml") + " -o " + at("e.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(slurp(dir / "e.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("sample_id,e0", 0), 0u);
  std::map<std::string, std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> v;
    std::istringstream cells(line);
    std::string id, cell;
    std::getline(cells, id, ',');
    while (std::getline(cells, cell, ',')) v.push_back(std::stod(cell));
    rows[id] = v;
  }
  ASSERT_EQ(rows.size(), t.size());
  std::map<IdentityId, std::vector<double>> first;
  for (const auto& s : t.info()) {
    auto [it, fresh] = first.emplace(*s.identity, rows.at(s.sample_id));
    if (fresh) continue;
    for (std::size_t k = 0; k < it->second.size(); ++k) EXPECT_NEAR(it->second[k], rows.at(s.sample_id)[k], 1e-6);
  }
}

TEST_F(Cli, EmbedEmptyTableIsHeaderOnly) {
  SyntheticSpec spec;
  spec.identities = 6;
  spec.dim = 12;
  const auto t = generate_synthetic(spec);
  save_model(fit_nk3ml(t, {}), at("m.nk3m"));
  std::ofstream(at("empty.csv")) << encode_csv(FeatureTable(12));
  const auto r = run("embed --model " + at("m.nk3m") + " --data " + at("empty.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find('\n'), r.out.size() - 1);
  EXPECT_EQ(r.out.rfind("sample_id,e0", 0), 0u);
}

TEST_F(Cli, EmbedRankingMatchesInProcess) {
  SyntheticSpec spec;
  spec.identities = 24;
  spec.dim = 50;
  spec.noise_sigma = 0.6;
  spec.seed = 5;
  const auto t = generate_synthetic(spec);
  const auto split = make_split(t, SplitSpec{}, 0);
  const auto model = fit_nk3ml(split.labeled, {});
  save_model(model, at("m.nk3m"));
  save_feature_table(split.probe, at("p.ssml"), TableFormat::binary);
  save_feature_table(split.gallery, at("g.ssml"), TableFormat::binary);
  ASSERT_EQ(run("embed --model " + at("m.nk3m") + " --data " + at("p.ssml") + " -o " + at("pe.csv")).code, 0);
  ASSERT_EQ(run("embed --model " + at("m.nk3m") + " --data " + at("g.ssml") + " -o " + at("ge.csv")).code, 0);
  const auto parse = [&](const std::string& f) {
    std::istringstream in(slurp(dir / f));
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      std::istringstream cells(line);
      std::string cell;
      std::getline(cells, cell, ',');
      rows.emplace_back();
      while (std::getline(cells, cell, ',')) rows.back().push_back(std::stod(cell));
    }
    RowMatrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return m;
  };
  EXPECT_EQ(rank_embeddings(parse("pe.csv"), parse("ge.csv")), rank_gallery(model, split.probe, split.gallery));

  const auto e = run("eval --model " + at("m.nk3m") + " --probe " + at("p.ssml") + " --gallery " + at("g.ssml") + " --ranks 1,5");
  ASSERT_EQ(e.code, 0) << e.out;
  const auto curve = cmc(rank_gallery(model, split.probe, split.gallery), identities_of(split.probe),
                         identities_of(split.gallery), std::vector<std::size_t>{1, 5});
  std::ostringstream want;
  write_cmc_csv(want, curve);
  EXPECT_EQ(e.out, want.str());
}

TEST_F(Cli, MineWritesPairs) {
  SyntheticSpec spec;
  spec.identities = 16;
  spec.dim = 40;
  spec.noise_sigma = 0.1;
  const auto t = generate_synthetic(spec);
  std::vector<std::size_t> lab, unl;
  for (std::size_t i = 0; i < t.size(); ++i) (*t.info(i).identity < 6 ? lab : unl).push_back(i);
  save_feature_table(t.subset(lab), at("l.ssml"), TableFormat::binary);
  save_feature_table(t.subset(unl).without_identities(), at("u.ssml"), TableFormat::binary);
  const auto r = run("mine --labeled " + at("l.ssml") + " --unlabeled " + at("u.ssml") + " --model-out " + at("m.nk3m"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.rfind("iteration,anchor_camera,anchor_id,matched_camera,matched_id,affinity\n", 0), 0u);
  EXPECT_TRUE(fs::exists(dir / "m.nk3m"));
}
