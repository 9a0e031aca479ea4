#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "labeldiff/training.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

const std::string kTiny =
    " --base-width 8 --channel-mults 1,2,2 --time-embed-dim 8 --groups 4 --encoder-widths 4,4,4"
    " --text-dim 8 --adapter-tokens 2 --total-steps 100";

RunResult run(const std::string& args, bool merge_stderr = false) {
  const std::string cmd = std::string(LABELDIFF_CLI_PATH) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// stderr only
RunResult run_err(const std::string& args) {
  const std::string cmd = std::string(LABELDIFF_CLI_PATH) + " " + args + " 2>&1 >/dev/null";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

// FNV-1a over sorted relative paths and file contents. resolved_config.txt echoes --out, so it is left out.
std::uint64_t tree_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "resolved_config.txt") files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& f : files) {
    mix(f.string());
    mix(read_text(root / f));
  }
  return h;
}

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("labeldiff_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& p) const { return (dir / p).string(); }
};

bool single_error_line(const std::string& err) {
  const auto ls = lines(err);
  return ls.size() == 1 && ls[0].rfind("error: ", 0) == 0;
}

}  // namespace

TEST_CASE("cli gen writes a dataset deterministically") {
  Workspace ws("gen");
  REQUIRE(run("gen --out " + (ws / "a") + " --count 10 --seed 4").code == 0);
  int images = 0;
  for (const auto& e : fs::directory_iterator(ws.dir / "a" / "images")) images += e.path().extension() == ".png";
  CHECK(images == 10);
  CHECK(fs::exists(ws.dir / "a" / "manifest.jsonl"));
  CHECK(lines(read_text(ws.dir / "a" / "manifest.jsonl")).size() == 11u);
  CHECK(fs::exists(ws.dir / "a" / "resolved_config.txt"));

  REQUIRE(run("gen --out " + (ws / "b") + " --count 10 --seed 4").code == 0);
  CHECK(tree_digest(ws.dir / "a") == tree_digest(ws.dir / "b"));
  REQUIRE(run("gen --out " + (ws / "c") + " --count 10 --seed 5").code == 0);
  CHECK(tree_digest(ws.dir / "a") != tree_digest(ws.dir / "c"));

  REQUIRE(run("gen --out " + (ws / "s") + " --count 10 --seed 4 --test-frac 0.3").code == 0);
  CHECK(lines(read_text(ws.dir / "s" / "train.jsonl")).size() == 8u);
  CHECK(lines(read_text(ws.dir / "s" / "test.jsonl")).size() == 4u);
}

TEST_CASE("cli gen into an unwritable location") {
  Workspace ws("gen_fail");
  std::ofstream(ws.dir / "blocker") << "x";
  const auto target = ws / "blocker/data";
  const auto r = run_err("gen --out " + target + " --count 2");
  CHECK(r.code != 0);
  CHECK(single_error_line(r.output));
  CHECK(r.output.find(target) != std::string::npos);
}

TEST_CASE("cli usage errors") {
  CHECK(run("").code == 1);
  CHECK(run("gen").code == 1);
  CHECK(run("gen --out x --count nope").code == 1);
  const auto r = run_err("frobnicate");
  CHECK(r.code == 1);
  CHECK(single_error_line(r.output));
}

TEST_CASE("cli train, resume and missing data") {
  Workspace ws("train");
  REQUIRE(run("gen --out " + (ws / "d") + " --count 10 --seed 2").code == 0);
  const std::string base = "train --data " + (ws / "d") + " --out " + (ws / "t") + kTiny + " --batch 4 --log-every 5";
  REQUIRE(run(base + " --max-steps 50").code == 0);
  CHECK(fs::exists(ws.dir / "t" / "checkpoint.bin"));
  CHECK(fs::exists(ws.dir / "t" / "resolved_config.txt"));
  auto csv = lines(read_text(ws.dir / "t" / "loss.csv"));
  REQUIRE(csv.size() == 11u);
  CHECK(csv[0] == "step,loss,wall_ms");
  CHECK(csv.back().rfind("50,", 0) == 0);
  CHECK(labeldiff::load_checkpoint(ws.dir / "t" / "checkpoint.bin").step == 50);

  REQUIRE(run(base + " --resume --max-steps 20").code == 0);
  csv = lines(read_text(ws.dir / "t" / "loss.csv"));
  REQUIRE(csv.size() == 15u);
  CHECK(csv[11].rfind("55,", 0) == 0);
  CHECK(csv.back().rfind("70,", 0) == 0);
  CHECK(labeldiff::load_checkpoint(ws.dir / "t" / "checkpoint.bin").step == 70);

  const auto missing = run_err("train --data " + (ws / "nowhere") + " --out " + (ws / "t2") + kTiny);
  CHECK(missing.code == 2);
  CHECK(single_error_line(missing.output));
  CHECK(missing.output.find("nowhere") != std::string::npos);

  const auto resume_missing = run_err("train --data " + (ws / "d") + " --out " + (ws / "t3") + kTiny + " --resume");
  CHECK(resume_missing.code == 2);
  CHECK(single_error_line(resume_missing.output));
}

TEST_CASE("cli config file and flag precedence") {
  Workspace ws("config");
  std::ofstream(ws.dir / "gen.conf") << "# dataset\ncount = 3\nseed = 9\n";
  REQUIRE(run("gen --config " + (ws / "gen.conf") + " --out " + (ws / "d")).code == 0);
  CHECK(lines(read_text(ws.dir / "d" / "manifest.jsonl")).size() == 4u);
  REQUIRE(run("gen --config " + (ws / "gen.conf") + " --count 2 --out " + (ws / "e")).code == 0);
  CHECK(lines(read_text(ws.dir / "e" / "manifest.jsonl")).size() == 3u);
  CHECK(read_text(ws.dir / "e" / "resolved_config.txt").find("count = 2") != std::string::npos);

  std::ofstream(ws.dir / "bad.conf") << "colour = red\n";
  const auto r = run_err("gen --config " + (ws / "bad.conf") + " --out " + (ws / "f"));
  CHECK(r.code == 1);
  CHECK(r.output.find("colour") != std::string::npos);
}

TEST_CASE("cli sample, eval and ablate") {
  Workspace ws("eval");
  REQUIRE(run("gen --out " + (ws / "d") + " --count 3 --seed 6").code == 0);
  REQUIRE(run("train --data " + (ws / "d") + " --out " + (ws / "t") + kTiny + " --batch 4 --max-steps 10").code == 0);
  const std::string ckpt = ws / "t/checkpoint.bin";

  REQUIRE(run("sample --checkpoint " + ckpt + " --image " + (ws / "d/images/0000.png") +
              " --phrase \"red circle\" --out " + (ws / "m.png") + " --ddim-steps 5")
              .code == 0);
  CHECK(fs::exists(ws.dir / "m.png"));
  CHECK(read_text(ws.dir / "m.png.txt").find("seed") != std::string::npos);

  const std::string eval = "eval --checkpoint " + ckpt + " --data " + (ws / "d") + " --ddim-steps 4 --out ";
  REQUIRE(run(eval + (ws / "e1")).code == 0);
  REQUIRE(run(eval + (ws / "e2")).code == 0);
  const auto summary = lines(read_text(ws.dir / "e1" / "summary.csv"));
  REQUIRE(summary.size() == 2u);
  CHECK(summary[0] == "overall,things,stuff,singulars,plurals");
  CHECK(std::count(summary[1].begin(), summary[1].end(), ',') == 4);
  CHECK(read_text(ws.dir / "e1" / "per_phrase.csv") == read_text(ws.dir / "e2" / "per_phrase.csv"));
  CHECK(read_text(ws.dir / "e1" / "summary.csv") == read_text(ws.dir / "e2" / "summary.csv"));
  CHECK(fs::exists(ws.dir / "e1" / "resolved_config.txt"));

  std::ofstream(ws.dir / "d" / "empty.jsonl") << "{\"format\":\"labeldiff-manifest\",\"version\":1}\n";
  const auto empty = run_err(eval + (ws / "e3") + " --manifest empty.jsonl");
  CHECK(empty.code == 2);
  CHECK(single_error_line(empty.output));

  const std::string ablate = "ablate --checkpoint " + ckpt + " --data " + (ws / "d") + " --out ";
  REQUIRE(run(ablate + (ws / "a1") + " --axis ddim_steps --values 20,30,50").code == 0);
  auto rows = lines(read_text(ws.dir / "a1" / "ablation.csv"));
  REQUIRE(rows.size() == 4u);
  CHECK(rows[0] == "ddim_steps,overall,things,stuff,singulars,plurals");
  CHECK(rows[1].rfind("20,", 0) == 0);
  CHECK(rows[3].rfind("50,", 0) == 0);
  CHECK(read_text(ws.dir / "a1" / "ablation.svg").find("<svg") != std::string::npos);

  REQUIRE(run(ablate + (ws / "a2") + " --axis guidance_scale --values 3 --ddim-steps 4").code == 0);
  CHECK(lines(read_text(ws.dir / "a2" / "ablation.csv")).size() == 2u);
  CHECK(fs::exists(ws.dir / "a2" / "ablation.svg"));

  const auto bad = run_err(ablate + (ws / "a3") + " --axis temperature --values 1");
  CHECK(bad.code == 1);
  CHECK(single_error_line(bad.output));
}

TEST_CASE("cli image size ablation trains per size") {
  Workspace ws("ablate_size");
  REQUIRE(run("ablate --axis image_size --values 32,64 --train-scenes 4 --test-scenes 2 --out " + (ws / "a") +
              " --base-width 8 --channel-mults 1,2 --injection-levels 0,1 --cross-attention-levels 0,1"
              " --time-embed-dim 8 --groups 4 --encoder-widths 4,4,4 --text-dim 8 --adapter-tokens 2"
              " --total-steps 100 --batch 4 --max-steps 3 --ddim-steps 3 --decoder-epochs 0")
              .code == 0);
  const auto rows = lines(read_text(ws.dir / "a" / "ablation.csv"));
  REQUIRE(rows.size() == 3u);
  CHECK(rows[1].rfind("32,", 0) == 0);
  CHECK(rows[2].rfind("64,", 0) == 0);
  CHECK(fs::exists(ws.dir / "a" / "size_32" / "checkpoint.bin"));
}
