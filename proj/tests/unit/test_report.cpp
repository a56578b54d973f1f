#include <regex>

#include "doctest.h"
#include "../helpers.hpp"
#include "permweld/error.hpp"
#include "permweld/report.hpp"

using namespace permweld;

namespace {

SweepReport sample_sweep() {
  const MlpSpec spec = testing::spec_of({4, 5, 3});
  const MixedDataset m = mix(testing::share(testing::random_dataset(20, 4, 3, 1)),
                             testing::share(testing::random_dataset(20, 4, 3, 2)));
  return sweep(init_params(spec, 1), init_params(spec, 2), m, 7);
}

std::size_t count(const std::string& text, const std::string& what) {
  std::size_t n = 0;
  for (std::size_t p = text.find(what); p != std::string::npos; p = text.find(what, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("sweep csv") {
    const SweepReport s = sample_sweep();
    const std::string csv = sweep_csv(s);
    CHECK(csv.rfind("lambda,loss_a,loss_b,loss_ab,acc_a,acc_b,acc_ab\n", 0) == 0);
    CHECK(count(csv, "\n") == 8);
    CHECK(csv.find("\n0,") != std::string::npos);
    CHECK(csv.find("\n1,") != std::string::npos);
  }

  TEST_CASE("sweep svg is deterministic with two panels of three lines") {
    const SweepReport s = sample_sweep();
    const std::string svg = sweep_svg(s, "naive & <test>");
    CHECK(svg == sweep_svg(s, "naive & <test>"));
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(count(svg, "<polyline") == 6);
    CHECK(count(svg, "class=\"panel\"") == 2);
    CHECK(svg.find("naive &amp; &lt;test&gt;") != std::string::npos);
    SweepReport bad = s;
    bad.loss_ab[1] = 99;
    CHECK_THROWS_AS(sweep_svg(bad, "x"), ValidationError);
  }

  TEST_CASE("merge report json round trip") {
    MergeReport r;
    r.config_digest = "abc";
    r.method = "wm";
    r.metrics = {{"barrier", 0.25}, {"l2_raw", 3.0}};
    r.sweep = sample_sweep();
    r.provenance = {{"a", "x.pmck"}};
    const nlohmann::json j = to_json(r);
    for (const char* key : {"tool_version", "config_digest", "method", "metrics", "sweep", "provenance"}) {
      CHECK(j.contains(key));
    }
    CHECK(j["tool_version"] == kToolVersion);
    CHECK(merge_report_from_json(j) == r);
    CHECK(merge_report_from_json(nlohmann::json::parse(j.dump())) == r);
    r.sweep.reset();
    CHECK(merge_report_from_json(to_json(r)) == r);
    CHECK_THROWS_AS(merge_report_from_json({{"method", 3}}), FormatError);
    nlohmann::json broken = j;
    broken["sweep"]["loss_ab"] = "x";
    CHECK_THROWS_AS(merge_report_from_json(broken), FormatError);
  }

  TEST_CASE("table csvs") {
    std::vector<Table1Row> rows(2);
    rows[0].degree = 0;
    rows[1].degree = 30;
    rows[1].barrier = 0.5;
    const std::string t1 = table1_csv(rows);
    CHECK(t1.rfind("degree,l2_raw,l2_per_param,barrier,facc,acc_wm\n", 0) == 0);
    CHECK(count(t1, "\n") == 3);
    const std::string t2 = table2_csv({{"naive", 0.4575}, {"ste_full", 0.8365}});
    CHECK(t2 == "row,acc\nnaive,45.75\nste_full,83.65\n");
  }

  TEST_CASE("write_output creates directories") {
    testing::TempDir dir("out");
    write_output(dir / "a/b/c.txt", "hi\n");
    CHECK(testing::read_bytes(dir / "a/b/c.txt") == "hi\n");
  }
}
