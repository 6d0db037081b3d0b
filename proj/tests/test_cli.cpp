#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "eatr/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("eatr_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const {
    return (path / name).string();
  }
};

struct CmdResult {
  int code = -1;
  std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd =
      env + (env.empty() ? "" : " ") + EATR_CLI_PATH + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  CmdResult res;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) res.output.append(buf, n);
  const int status = ::pclose(p);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string slurp(const std::string& path) {
  return eatr::util::read_file(path);
}

json manifest_sans_clock(const std::string& path) {
  json j = json::parse(slurp(path));
  j.erase("wall_clock_sec");
  return j;
}

std::string gen_args(const std::string& out, const std::string& seed) {
  return "gen-data --out " + out +
         " --num-samples 16 --frames 16 --tokens 4 --d-in 12 "
         "--noise-sigma 0 " +
         seed;
}

const char* kTinyTrain =
    " --d 16 --heads 4 --depth 2 --queries 4 --slot-iters 2 "
    "--epochs 2 --batch-size 8 --workers 3 --seed 7 --val-fraction 0.25";

}  // namespace

TEST_CASE("gen-data is deterministic and writes a manifest") {
  TempDir dir;
  CmdResult a = run_cli(gen_args(dir.sub("d1"), "--seed 11"));
  CHECK(a.code == 0);
  CmdResult b = run_cli(gen_args(dir.sub("d2"), "--seed 11"));
  CHECK(b.code == 0);
  CHECK(slurp(dir.sub("d1") + "/dataset.jsonl") ==
        slurp(dir.sub("d2") + "/dataset.jsonl"));
  CHECK(slurp(dir.sub("d1") + "/features/synth_000003_video.eatf") ==
        slurp(dir.sub("d2") + "/features/synth_000003_video.eatf"));

  json m = json::parse(slurp(dir.sub("d1") + "/manifest.json"));
  CHECK(m.at("command") == "gen-data");
  CHECK(m.at("seed") == 11);
  CHECK(m.contains("wall_clock_sec"));
  CHECK(m.at("config").at("num_samples") == 16);

  // a different seed actually changes the data
  CmdResult c = run_cli(gen_args(dir.sub("d3"), "--seed 12"));
  CHECK(c.code == 0);
  CHECK(slurp(dir.sub("d1") + "/dataset.jsonl") !=
        slurp(dir.sub("d3") + "/dataset.jsonl"));
}

TEST_CASE("EATR_SEED is the default seed, flags win") {
  TempDir dir;
  CHECK(run_cli(gen_args(dir.sub("env"), ""), "EATR_SEED=11").code == 0);
  CHECK(run_cli(gen_args(dir.sub("flag"), "--seed 11")).code == 0);
  CHECK(slurp(dir.sub("env") + "/dataset.jsonl") ==
        slurp(dir.sub("flag") + "/dataset.jsonl"));

  CHECK(run_cli(gen_args(dir.sub("both"), "--seed 11"), "EATR_SEED=99").code ==
        0);
  CHECK(slurp(dir.sub("both") + "/dataset.jsonl") ==
        slurp(dir.sub("flag") + "/dataset.jsonl"));

  CmdResult bad = run_cli(gen_args(dir.sub("bad"), ""), "EATR_SEED=abc");
  CHECK(bad.code == 2);
  CHECK(bad.output.find("EATR_SEED") != std::string::npos);
}

TEST_CASE("config errors name the offence and exit 2") {
  TempDir dir;
  CmdResult r = run_cli("gen-data --out " + dir.sub("x") +
                        " --min-events 5 --max-events 3");
  CHECK(r.code == 2);
  CHECK(r.output.find("min_events/max_events") != std::string::npos);

  CmdResult prof = run_cli("train --data " + dir.sub("none") + " --out " +
                           dir.sub("o") + " --profile turbo");
  CHECK(prof.code == 2);
  CHECK(prof.output.find("--profile") != std::string::npos);

  eatr::util::atomic_write_file(dir.sub("cfg.json"),
                                "{\"warp_speed\": 9}\n");
  CmdResult unk = run_cli("train --data " + dir.sub("none") + " --out " +
                          dir.sub("o") + " --config " + dir.sub("cfg.json"));
  CHECK(unk.code == 2);
  CHECK(unk.output.find("warp_speed") != std::string::npos);

  CmdResult flag = run_cli("gen-data --out " + dir.sub("y") + " --bogus 1");
  CHECK(flag.code == 2);
}

TEST_CASE("missing artifacts exit 3") {
  TempDir dir;
  CmdResult r = run_cli("eval --ckpt " + dir.sub("no.ckpt") + " --data " +
                        dir.str());
  CHECK(r.code == 3);

  CmdResult d = run_cli("pseudo-events --features " + dir.sub("no.eatf"));
  CHECK(d.code == 3);
}

TEST_CASE("train, eval, predict, and pseudo-events round trip") {
  TempDir dir;
  REQUIRE(run_cli(gen_args(dir.sub("ds"), "--seed 11")).code == 0);

  CmdResult tr = run_cli("train --data " + dir.sub("ds") + " --out " +
                         dir.sub("run") + " --profile desk" + kTinyTrain +
                         " --plot");
  CHECK(tr.code == 0);
  CHECK(fs::exists(dir.sub("run") + "/best.ckpt"));
  CHECK(fs::exists(dir.sub("run") + "/last.ckpt"));
  CHECK(fs::exists(dir.sub("run") + "/loss.csv"));
  CHECK(fs::exists(dir.sub("run") + "/history.csv"));
  CHECK(fs::exists(dir.sub("run") + "/manifest.json"));
  CHECK(fs::exists(dir.sub("run") + "/loss.png"));
  CHECK(fs::exists(dir.sub("run") + "/metrics.png"));
  CHECK(slurp(dir.sub("run") + "/loss.png").substr(1, 3) == "PNG");

  json man = manifest_sans_clock(dir.sub("run") + "/manifest.json");
  CHECK(man.at("command") == "train");
  CHECK(man.at("config").at("d") == 16);
  CHECK(man.at("config").at("epochs") == 2);
  CHECK(man.at("inputs").contains("dataset"));
  CHECK(man.at("inputs").contains("features"));

  CmdResult ev = run_cli("eval --ckpt " + dir.sub("run") + "/best.ckpt" +
                         " --data " + dir.sub("ds") + " --out " +
                         dir.sub("ev"));
  CHECK(ev.code == 0);
  json rep = json::parse(slurp(dir.sub("ev") + "/metrics.json"));
  CHECK(rep.contains("R1@0.5"));
  CHECK(rep.contains("R1@0.7"));
  CHECK(rep.contains("mAP@0.5"));
  CHECK(rep.contains("mAP@0.75"));
  CHECK(rep.contains("mAP_avg"));
  const std::string csv = slurp(dir.sub("ev") + "/per_sample.csv");
  CHECK(csv.rfind("qid,top1_iou", 0) == 0);

  CmdResult pr =
      run_cli("predict --ckpt " + dir.sub("run") + "/best.ckpt" + " --data " +
              dir.sub("ds") + " --out " + dir.sub("p.jsonl") +
              " --top-k 2 --dump-attention " + dir.sub("att.jsonl"));
  CHECK(pr.code == 0);
  int lines = 0;
  std::istringstream ps(slurp(dir.sub("p.jsonl")));
  std::string line;
  while (std::getline(ps, line)) {
    json rec = json::parse(line);
    CHECK(rec.at("spans").size() == 2);
    CHECK(rec.at("spans").at(0).at(2).get<double>() >=
          rec.at("spans").at(1).at(2).get<double>());
    ++lines;
  }
  CHECK(lines == 16);

  json att = json::parse(slurp(dir.sub("att.jsonl")).substr(
      0, slurp(dir.sub("att.jsonl")).find('\n')));
  REQUIRE(att.at("layers").size() == 2);           // decoder depth
  REQUIRE(att.at("layers").at(0).size() == 4);     // queries
  CHECK(att.at("layers").at(0).at(0).size() == 20);  // frames + tokens

  // zero-noise pseudo events reproduce the planted blocks
  CmdResult pe = run_cli("pseudo-events --data " + dir.sub("ds") + " --out " +
                         dir.sub("events.jsonl"));
  CHECK(pe.code == 0);
  std::istringstream es(slurp(dir.sub("events.jsonl")));
  std::istringstream dss(slurp(dir.sub("ds") + "/dataset.jsonl"));
  std::string eline, dline;
  while (std::getline(es, eline) && std::getline(dss, dline)) {
    json er = json::parse(eline);
    json dr = json::parse(dline);
    const auto starts = dr.at("meta").at("event_starts");
    REQUIRE(er.at("events").size() == starts.size());
    for (size_t k = 0; k < starts.size(); ++k) {
      const double want = double(starts.at(k).get<int>()) / 16.0;
      CHECK(er.at("events").at(k).at(0).get<double>() ==
            doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("reruns are idempotent modulo wall clock") {
  TempDir dir;
  REQUIRE(run_cli(gen_args(dir.sub("ds"), "--seed 11")).code == 0);
  const std::string train_args = " --profile desk" + std::string(kTinyTrain);
  REQUIRE(run_cli("train --data " + dir.sub("ds") + " --out " +
                  dir.sub("r1") + train_args)
              .code == 0);
  REQUIRE(run_cli("train --data " + dir.sub("ds") + " --out " +
                  dir.sub("r2") + train_args)
              .code == 0);
  CHECK(slurp(dir.sub("r1") + "/loss.csv") ==
        slurp(dir.sub("r2") + "/loss.csv"));
  CHECK(slurp(dir.sub("r1") + "/history.csv") ==
        slurp(dir.sub("r2") + "/history.csv"));

  json m1 = manifest_sans_clock(dir.sub("r1") + "/manifest.json");
  json m2 = manifest_sans_clock(dir.sub("r2") + "/manifest.json");
  m1.erase("outputs");  // carry the run directory name
  m2.erase("outputs");
  CHECK(m1.dump() == m2.dump());

  REQUIRE(run_cli("predict --ckpt " + dir.sub("r1") + "/best.ckpt --data " +
                  dir.sub("ds") + " --out " + dir.sub("p1.jsonl"))
              .code == 0);
  REQUIRE(run_cli("predict --ckpt " + dir.sub("r1") + "/best.ckpt --data " +
                  dir.sub("ds") + " --out " + dir.sub("p2.jsonl"))
              .code == 0);
  CHECK(slurp(dir.sub("p1.jsonl")) == slurp(dir.sub("p2.jsonl")));
}

TEST_CASE("training divergence exits 4 with diagnostics") {
  TempDir dir;
  REQUIRE(run_cli(gen_args(dir.sub("ds"), "--seed 11")).code == 0);
  CmdResult r = run_cli("train --data " + dir.sub("ds") + " --out " +
                        dir.sub("run") +
                        " --profile desk --d 16 --heads 4 --depth 2 "
                        "--queries 4 --slot-iters 2 --epochs 1 "
                        "--batch-size 1 --workers 2 --seed 7 --lr 1e10");
  CHECK(r.code == 4);
  CHECK(fs::exists(dir.sub("run") + "/divergence.json"));
  json diag = json::parse(slurp(dir.sub("run") + "/divergence.json"));
  CHECK(diag.contains("error"));
  CHECK(diag.contains("global_step"));
}
