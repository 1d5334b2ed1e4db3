#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "polyscore/binio.hpp"
#include "polyscore/checkpoint.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;
using namespace polyscore;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr together
};

Run run(const std::string& args) {
  const std::string cmd = std::string(POLYSCORE_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "polyscore_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    save_jsonl(dir_ / "train.jsonl", synth::overlap_examples({}, 2000, 1));
    save_jsonl(dir_ / "valid.jsonl", synth::overlap_examples({}, 100, 2));
    const auto pool = synth::overlap_examples({}, 1, 3).front();
    std::string cands;
    for (const auto& c : pool.candidates) cands += c + "\n";
    binio::write_file(dir_ / "cands.txt", cands);
    binio::write_file(dir_ / "queries.jsonl",
                      "{\"query_id\": \"a\", \"context\": [\"" + pool.context[0] + "\", \"" + pool.context[1] +
                          "\"]}\n{\"context\": [\"t1 t2 t3\"]}\n");
    const auto r = run("train --data " + p("train.jsonl") + " --out " + p("bi.ckpt") +
                       " --seed 1 --steps 20 --batch-size 8 --lr 1e-3 --warmup 0");
    ASSERT_EQ(r.code, 0) << r.out;
  }
  static std::string p(const std::string& name) { return (dir_ / name).string(); }
  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, MissingCorpusIsAnInputError) {
  const auto r = run("train --data " + p("nope.jsonl") + " --out " + p("x.ckpt") + " --seed 1 --steps 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("nope.jsonl"), std::string::npos) << r.out;
}

TEST_F(Cli, UnknownFlagAndBadValues) {
  EXPECT_EQ(run("train --no-such-flag 1").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  const auto r = run("train --data " + p("train.jsonl") + " --out " + p("x.ckpt") +
                     " --seed 1 --head poly:learnt:0 --lr -1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("head"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("lr"), std::string::npos) << r.out;
  EXPECT_EQ(run("train --data " + p("train.jsonl") + " --out " + p("x.ckpt")).code, 2);  // no seed
}

TEST_F(Cli, IndexThenRankMatchesNoCache) {
  ASSERT_EQ(run("index --checkpoint " + p("bi.ckpt") + " --candidates " + p("cands.txt") + " --out " + p("c.cache")).code, 0);
  const auto a = run("rank --checkpoint " + p("bi.ckpt") + " --queries " + p("queries.jsonl") + " --cache " +
                     p("c.cache") + " --k 5 --out " + p("a.jsonl"));
  const auto b = run("rank --checkpoint " + p("bi.ckpt") + " --queries " + p("queries.jsonl") + " --candidates " +
                     p("cands.txt") + " --no-cache --k 5 --out " + p("b.jsonl"));
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  std::istringstream ia(binio::read_file(p("a.jsonl"))), ib(binio::read_file(p("b.jsonl")));
  std::string la, lb;
  int lines = 0;
  while (std::getline(ia, la) && std::getline(ib, lb)) {
    ++lines;
    const auto ja = nlohmann::json::parse(la), jb = nlohmann::json::parse(lb);
    EXPECT_EQ(ja["query_id"], jb["query_id"]);
    ASSERT_EQ(ja["ranking"].size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(ja["ranking"][i]["id"], jb["ranking"][i]["id"]);
      EXPECT_NEAR(ja["ranking"][i]["score"].get<double>(), jb["ranking"][i]["score"].get<double>(), 1e-6);
    }
  }
  EXPECT_EQ(lines, 2);
  EXPECT_TRUE(fs::exists(p("a.jsonl.manifest.json")));
  const auto man = nlohmann::json::parse(binio::read_file(p("a.jsonl.manifest.json")));
  EXPECT_EQ(man["command"], "rank");
  EXPECT_EQ(man["inputs"]["cache"]["hash"].get<std::string>().size(), 16u);
}

TEST_F(Cli, StaleCacheExitsThree) {
  ASSERT_EQ(run("train --data " + p("train.jsonl") + " --out " + p("other.ckpt") + " --seed 2 --steps 2 --vocab " +
                p("bi.ckpt.vocab"))
                .code,
            0);
  ASSERT_EQ(run("index --checkpoint " + p("bi.ckpt") + " --candidates " + p("cands.txt") + " --out " + p("s.cache")).code, 0);
  const auto r = run("rank --checkpoint " + p("other.ckpt") + " --queries " + p("queries.jsonl") + " --cache " +
                     p("s.cache") + " --out " + p("s.jsonl"));
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST_F(Cli, KLargerThanCandidatesIsClamped) {
  const auto r = run("rank --checkpoint " + p("bi.ckpt") + " --queries " + p("queries.jsonl") + " --candidates " +
                     p("cands.txt") + " --no-cache --k 500");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("warning: k = 500 exceeds 20"), std::string::npos);
}

TEST_F(Cli, ConfigFileWithOverrides) {
  binio::write_file(p("run.cfg"), "data = " + p("train.jsonl") + "\nout = " + p("cfg.ckpt") +
                                      "\nseed = 4\nsteps = 3\nbatch_size = 2\nmodel.layers = 1\n");
  const auto r = run("train --config " + p("run.cfg") + " --steps 2");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(nlohmann::json::parse(r.out.substr(r.out.rfind('{')))["steps"], 2);
  EXPECT_EQ(load_checkpoint(p("cfg.ckpt")).model.config.layers, 1u);
  binio::write_file(p("bad.cfg"), "stepz = 3\n");
  EXPECT_EQ(run("train --config " + p("bad.cfg")).code, 2);
}

TEST_F(Cli, PretrainIsDeterministicAndFreezeKeepsTables) {
  const std::string common = "pretrain --data " + p("train.jsonl") + " --seed 5 --steps 5 --batch-size 4 ";
  ASSERT_EQ(run(common + "--out " + p("p1.ckpt")).code, 0);
  ASSERT_EQ(run(common + "--out " + p("p2.ckpt")).code, 0);
  EXPECT_EQ(binio::read_file(p("p1.ckpt")), binio::read_file(p("p2.ckpt")));

  const auto r = run("train --data " + p("train.jsonl") + " --base " + p("p1.ckpt") + " --out " + p("f.ckpt") +
                     " --seed 1 --steps 3 --batch-size 4 --freeze all_but_embeddings --lr 1e-3 --warmup 0");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto base = load_checkpoint(p("p1.ckpt")).model, tuned = load_checkpoint(p("f.ckpt")).model;
  int tables = 0, moved = 0;
  for (const auto& [name, t] : tuned.params) {
    if (name.find(".embeddings.token") != std::string::npos || name.find(".embeddings.position") != std::string::npos ||
        name.find(".embeddings.segment") != std::string::npos) {
      ++tables;
      const auto src = "encoder" + name.substr(name.find(".embeddings."));
      EXPECT_EQ(t, base.params.at(src)) << name;
    } else if (const auto src = "encoder" + name.substr(name.find('.')); base.params.contains(src)) {
      moved += t == base.params.at(src) ? 0 : 1;
    }
  }
  EXPECT_EQ(tables, 6);
  EXPECT_GT(moved, 0);
}

TEST_F(Cli, TrainedBiBeatsChance) {
  const auto t = run("train --data " + p("train.jsonl") + " --out " + p("learn.ckpt") +
                     " --seed 3 --steps 800 --batch-size 16 --lr 1e-3 --warmup 20");
  ASSERT_EQ(t.code, 0) << t.out;
  const auto e = run("eval --checkpoint " + p("learn.ckpt") + " --data " + p("valid.jsonl") + " --out " + p("m.json"));
  ASSERT_EQ(e.code, 0) << e.out;
  const auto m = nlohmann::json::parse(binio::read_file(p("m.json")));
  EXPECT_GT(m["R@1/20"].get<double>(), 0.05);
  EXPECT_GT(m["mrr"].get<double>(), 0.0);
}

TEST_F(Cli, BenchWritesReport) {
  const auto r = run("bench --seed 1 --arch bi,poly4,cross --candidates 4,8 --queries 2 --warmup 1 "
                     "--extrapolate-cross-from 4 --model-layers 1 --vocab-size 50 --out " + p("bench.jsonl"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("8*"), std::string::npos);
  EXPECT_EQ(run("bench --arch bi").code, 2);  // seed is required
}
