#include <sys/wait.h>

#include <cstdlib>

#include "doctest.h"
#include "../helpers.hpp"
#include "json.hpp"
#include "permweld/data.hpp"
#include "permweld/report.hpp"
#include "permweld/train.hpp"

using nlohmann::json;

namespace {

const char* const kConfig = R"({
  "seed": 1,
  "datasets": {
    "a": {"kind": "blobs", "classes": 3, "per_class": 40, "dim": 16, "spread": 0.3, "seed": 1},
    "a_test": {"kind": "blobs", "classes": 3, "per_class": 20, "dim": 16, "spread": 0.3, "seed": 2},
    "b": {"kind": "rotate", "source": "a", "degrees": 90, "height": 4, "width": 4},
    "b_test": {"kind": "rotate", "source": "a_test", "degrees": 90, "height": 4, "width": 4}
  },
  "model": {"hidden": [8, 8]},
  "train": {"learning_rate": 0.05, "epochs": 3, "batch_size": 16},
  "align": {"ste_epochs": 2, "ste_batch_size": 16},
  "condense": {"ipc": 2, "outer_iterations": 6, "net_reinit_period": 3, "real_batch_per_class": 8},
  "table2": {"ste_condensed": {"ste_epochs": 2}, "data_cond_train": {"epochs": 2, "batch_size": 6}},
  "sweep": {"grid_size": 5},
  "pair": {"a": "a", "b": "b", "a_test": "a_test", "b_test": "b_test"},
  "table1": {"base": "a", "base_test": "a_test", "angles": [0, 90], "height": 4, "width": 4},
  "population": {"betas": [1.0, 0.1], "sweep_caps": [1, 300], "seeds": [0]},
  "fisher": {"max_samples": 30}
})";

class Cli {
 public:
  Cli() : dir_("cli") { testing::write_bytes(dir_ / "config.json", kConfig); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(PERMWELD_CLI_PATH) + " " + args + " > " + (dir_ / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  // Runs with the test config and an output directory under the temp dir.
  int run_in(const std::string& out, const std::string& args) const {
    return run("--config " + (dir_ / "config.json").string() + " --out-dir " + (dir_ / out).string() + " " + args);
  }
  std::filesystem::path operator/(const std::string& name) const { return dir_ / name; }
  std::string log() const { return testing::read_bytes(dir_ / "log.txt"); }
  std::string read(const std::string& name) const { return testing::read_bytes(dir_ / name); }

 private:
  testing::TempDir dir_;
};

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 2") {
    Cli cli;
    CHECK(cli.run("") == 2);
    CHECK(cli.run("frobnicate") == 2);
    CHECK(cli.run("--version") == 0);
    CHECK(cli.log().find(permweld::kToolVersion) != std::string::npos);
    CHECK(cli.run("train") == 2);
    CHECK(cli.run("--config " + (cli / "missing.json").string() + " gen-data") == 2);
    CHECK(cli.run_in("o", "train --dataset nope") == 2);
    CHECK(cli.run_in("o", "train --dataset " + (cli / "absent.pmds").string()) == 2);
    CHECK(cli.run_in("o", "merge --method naive " + (cli / "absent.pmck").string() + " " +
                              (cli / "absent.pmck").string()) == 2);
    CHECK(cli.run_in("o", "merge --method average x y") == 2);

    testing::write_bytes(cli / "bad.json", R"({"seed": 1, "trian": {}})");
    CHECK(cli.run("--config " + (cli / "bad.json").string() + " gen-data") == 2);
    CHECK(cli.log().find("trian") != std::string::npos);
    testing::write_bytes(cli / "syntax.json", "{");
    CHECK(cli.run("--config " + (cli / "syntax.json").string() + " gen-data") == 2);
  }

  TEST_CASE("data and format errors exit with 3") {
    Cli cli;
    testing::write_bytes(cli / "junk.pmck", "PMCKjunk");
    testing::write_bytes(cli / "junk.pmds", "nope");
    CHECK(cli.run_in("o", "merge --method naive " + (cli / "junk.pmck").string() + " " + (cli / "junk.pmck").string()) == 3);
    CHECK(cli.run_in("o", "train --dataset " + (cli / "junk.pmds").string()) == 3);
    testing::write_bytes(cli / "short.pmds", "PMDS\x01\x00\x00\x00\x09");
    CHECK(cli.run_in("o", "train --dataset " + (cli / "short.pmds").string()) == 3);
  }

  TEST_CASE("numeric failures exit with 4") {
    Cli cli;
    json doc = json::parse(kConfig);
    doc["train"]["learning_rate"] = 1e30;
    testing::write_bytes(cli / "hot.json", doc.dump());
    CHECK(cli.run("--config " + (cli / "hot.json").string() + " --out-dir " + (cli / "o").string() +
                  " train --dataset a") == 4);
  }

  TEST_CASE("gen-data, train, merge and sweep end to end") {
    Cli cli;
    REQUIRE(cli.run_in("o", "gen-data") == 0);
    const permweld::Dataset a = permweld::load_dataset(cli / "o/data/a.pmds");
    CHECK(a.size() == 120);
    CHECK(a.name == "a");

    REQUIRE(cli.run_in("o", "train --dataset a --test a_test --out " + (cli / "o/a.pmck").string()) == 0);
    REQUIRE(cli.run_in("o", "--seed 2 train --dataset b --out " + (cli / "o/b.pmck").string()) == 0);
    REQUIRE(cli.run_in("o2", "train --dataset a --test a_test --out " + (cli / "o2/a.pmck").string()) == 0);
    CHECK(cli.read("o/a.pmck") == cli.read("o2/a.pmck"));
    const json hist = json::parse(cli.read("o/a.pmck.history.json"));
    CHECK(hist.contains("history"));
    CHECK(hist.contains("test_accuracy"));

    const std::string models = (cli / "o/a.pmck").string() + " " + (cli / "o/b.pmck").string();
    for (const char* method : {"naive", "wm", "fwm", "ste", "fisher"}) {
      CAPTURE(method);
      const std::string data = std::string(method) == "naive" || std::string(method) == "fwm" ? "" : " --data a,b";
      REQUIRE(cli.run_in("m1", std::string("merge --method ") + method + data + " --eval a_test,b_test " + models) == 0);
      REQUIRE(cli.run_in("m2", std::string("--jobs 2 merge --method ") + method + data + " --eval a_test,b_test " + models) == 0);
      const std::string dir = std::string("merge-") + method + "/";
      const std::string report = cli.read("m1/" + dir + "report.json");
      CHECK(report == cli.read("m2/" + dir + "report.json"));
      CHECK(cli.read("m1/" + dir + "sweep.svg") == cli.read("m2/" + dir + "sweep.svg"));
      const permweld::MergeReport r = permweld::merge_report_from_json(json::parse(report));
      CHECK(r.method == method);
      REQUIRE(r.sweep.has_value());
      CHECK_NOTHROW(r.sweep->validate());
      CHECK(permweld::to_json(r) == json::parse(report));
      CHECK(first_line(cli.read("m1/" + dir + "sweep.csv")) == "lambda,loss_a,loss_b,loss_ab,acc_a,acc_b,acc_ab");
      CHECK(std::filesystem::exists(cli / ("m1/" + dir + "merged.pmck")));
      const std::string svg = cli.read("m1/" + dir + "sweep.svg");
      std::size_t lines = 0;
      for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
      CHECK(lines == 6);
    }
    CHECK(cli.run_in("m1", "merge --method ste " + models) == 2);

    REQUIRE(cli.run_in("s", "sweep --eval a_test,b_test --align wm " + models) == 0);
    CHECK(first_line(cli.read("s/sweep/sweep.csv")) == "lambda,loss_a,loss_b,loss_ab,acc_a,acc_b,acc_ab");
    CHECK(cli.run_in("s", "sweep --eval a_test,b_test --align ste " + models) == 2);

    REQUIRE(cli.run_in("c", "condense --dataset a --ipc 2") == 0);
    const permweld::Dataset cd = permweld::load_dataset(cli / "c/a-cond2.pmds");
    CHECK(cd.size() == 6);
    CHECK_NOTHROW(cd.validate());
  }

  TEST_CASE("table and study commands write their files") {
    Cli cli;
    REQUIRE(cli.run_in("t", "--jobs 2 table1") == 0);
    CHECK(first_line(cli.read("t/table1.csv")) == "degree,l2_raw,l2_per_param,barrier,facc,acc_wm");
    REQUIRE(cli.run_in("t", "--jobs 2 table2") == 0);
    const std::string t2 = cli.read("t/table2.csv");
    CHECK(first_line(t2) == "row,acc");
    CHECK(t2.find("\nste_data_cond,") != std::string::npos);
    REQUIRE(cli.run_in("t", "population") == 0);
    CHECK(std::filesystem::exists(cli / "t/population.csv"));
    REQUIRE(cli.run_in("t", "overlap") == 0);
    CHECK(first_line(cli.read("t/overlap.csv")) == "method,importance_overlap,weight_overlap,midpoint_acc");

    REQUIRE(cli.run_in("u", "--jobs 1 table2") == 0);
    CHECK(cli.read("u/table2.csv") == t2);
  }

  TEST_CASE("the data directory comes from the environment") {
    Cli cli;
    testing::TempDir data("env");
    permweld::save_dataset(permweld::gen_blobs(3, 10, 16, 0.3, 0), data / "tiny.pmds");
    testing::write_bytes(cli / "pm.json",
                         R"({"datasets": {"t": {"kind": "pmds", "path": "tiny.pmds"}}, "train": {"epochs": 1}})");
    const std::string base = "--config " + (cli / "pm.json").string() + " --out-dir " + (cli / "e").string() +
                             " train --dataset t";
    CHECK(cli.run(base) == 2);
    CHECK(std::system(("PERMWELD_DATA_DIR=" + data.path().string() + " " + PERMWELD_CLI_PATH + " " + base +
                       " > /dev/null 2>&1").c_str()) == 0);
  }
}
