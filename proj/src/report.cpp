#include "permweld/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "binary_io.hpp"
#include "permweld/error.hpp"

namespace permweld {

const char* const kToolVersion = PERMWELD_VERSION;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string num(double v) { return fmt("%.10g", v); }

const char* const kColors[3] = {"#1f77b4", "#ff7f0e", "#2ca02c"};
const char* const kSeries[3] = {"D_A", "D_B", "D_AB"};

void panel(std::string& out, double x0, const std::string& label, const std::vector<double>& lambdas,
           const std::vector<const std::vector<double>*>& series) {
  constexpr double w = 400, h = 260, top = 50;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto* s : series) {
    for (const double v : *s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const auto px = [&](double l) { return x0 + l * w; };
  const auto py = [&](double v) { return top + h - (v - lo) / (hi - lo) * h; };

  out += "<g class=\"panel\">\n";
  out += "<text x=\"" + fmt("%.2f", x0 + w / 2) + "\" y=\"" + fmt("%.2f", top - 12) +
         "\" text-anchor=\"middle\" font-size=\"14\">" + label + "</text>\n";
  out += "<rect x=\"" + fmt("%.2f", x0) + "\" y=\"" + fmt("%.2f", top) + "\" width=\"" + fmt("%.2f", w) +
         "\" height=\"" + fmt("%.2f", h) + "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (const double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    out += "<text x=\"" + fmt("%.2f", px(t)) + "\" y=\"" + fmt("%.2f", top + h + 16) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + fmt("%g", t) + "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    out += "<text x=\"" + fmt("%.2f", x0 - 6) + "\" y=\"" + fmt("%.2f", py(v) + 4) +
           "\" text-anchor=\"end\" font-size=\"11\">" + fmt("%.3g", v) + "</text>\n";
  }
  out += "<text x=\"" + fmt("%.2f", x0 + w / 2) + "\" y=\"" + fmt("%.2f", top + h + 34) +
         "\" text-anchor=\"middle\" font-size=\"12\">lambda</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    out += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(kColors[k]) + "\" points=\"";
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      if (i) out += ' ';
      out += fmt("%.2f", px(lambdas[i])) + "," + fmt("%.2f", py((*series[k])[i]));
    }
    out += "\"/>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double ly = top + 14 + 16.0 * static_cast<double>(k);
    out += "<text x=\"" + fmt("%.2f", x0 + w - 8) + "\" y=\"" + fmt("%.2f", ly) +
           "\" text-anchor=\"end\" font-size=\"11\" fill=\"" + kColors[k] + "\">" + kSeries[k] + "</text>\n";
  }
  out += "</g>\n";
}

std::vector<double> doubles(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<std::vector<double>>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("sweep.") + key + " is missing or malformed");
  }
}

}  // namespace

std::map<std::string, double> metrics_map(const MergeMetrics& m) {
  return {{"l2_raw", m.l2_raw},
          {"l2_per_param", m.l2_per_param},
          {"barrier", m.barrier},
          {"sharpness", m.sharpness},
          {"flipped_acc", m.flipped_acc},
          {"best_lambda_acc", m.best_lambda_acc},
          {"midpoint_acc", m.midpoint_acc}};
}

nlohmann::json to_json(const SweepReport& s) {
  return {{"alpha", s.alpha},   {"lambdas", s.lambdas}, {"loss_a", s.loss_a}, {"loss_b", s.loss_b},
          {"loss_ab", s.loss_ab}, {"acc_a", s.acc_a},   {"acc_b", s.acc_b},   {"acc_ab", s.acc_ab}};
}

SweepReport sweep_from_json(const nlohmann::json& j) {
  SweepReport s;
  if (!j.is_object() || !j.contains("alpha") || !j["alpha"].is_number()) {
    throw FormatError("sweep.alpha is missing or malformed");
  }
  s.alpha = j["alpha"].get<double>();
  s.lambdas = doubles(j, "lambdas");
  s.loss_a = doubles(j, "loss_a");
  s.loss_b = doubles(j, "loss_b");
  s.loss_ab = doubles(j, "loss_ab");
  s.acc_a = doubles(j, "acc_a");
  s.acc_b = doubles(j, "acc_b");
  s.acc_ab = doubles(j, "acc_ab");
  return s;
}

nlohmann::json to_json(const MergeReport& r) {
  nlohmann::json j = {{"tool_version", r.tool_version},
                      {"config_digest", r.config_digest},
                      {"method", r.method},
                      {"metrics", r.metrics},
                      {"provenance", r.provenance}};
  j["sweep"] = r.sweep ? to_json(*r.sweep) : nlohmann::json(nullptr);
  return j;
}

MergeReport merge_report_from_json(const nlohmann::json& j) {
  MergeReport r;
  try {
    r.tool_version = j.at("tool_version").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    r.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("merge report: ") + e.what());
  }
  if (j.contains("sweep") && !j["sweep"].is_null()) r.sweep = sweep_from_json(j["sweep"]);
  return r;
}

std::string sweep_csv(const SweepReport& s) {
  std::string out = "lambda,loss_a,loss_b,loss_ab,acc_a,acc_b,acc_ab\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += num(s.lambdas[i]) + "," + num(s.loss_a[i]) + "," + num(s.loss_b[i]) + "," + num(s.loss_ab[i]) + "," +
           num(s.acc_a[i]) + "," + num(s.acc_b[i]) + "," + num(s.acc_ab[i]) + "\n";
  }
  return out;
}

std::string sweep_svg(const SweepReport& s, const std::string& title) {
  s.validate(1e-6);
  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"380\" viewBox=\"0 0 960 380\" "
      "font-family=\"sans-serif\">\n";
  out += "<rect width=\"960\" height=\"380\" fill=\"white\"/>\n";
  std::string safe;
  for (const char c : title) {
    if (c == '<') safe += "&lt;";
    else if (c == '>') safe += "&gt;";
    else if (c == '&') safe += "&amp;";
    else safe += c;
  }
  out += "<text x=\"480\" y=\"18\" text-anchor=\"middle\" font-size=\"15\">" + safe + "</text>\n";
  panel(out, 60, "loss", s.lambdas, {&s.loss_a, &s.loss_b, &s.loss_ab});
  panel(out, 530, "accuracy", s.lambdas, {&s.acc_a, &s.acc_b, &s.acc_ab});
  out += "</svg>\n";
  return out;
}

std::string table1_csv(const std::vector<Table1Row>& rows) {
  std::string out = "degree,l2_raw,l2_per_param,barrier,facc,acc_wm\n";
  for (const auto& r : rows) {
    out += num(r.degree) + "," + num(r.l2_raw) + "," + num(r.l2_per_param) + "," + num(r.barrier) + "," +
           num(r.facc) + "," + num(r.acc_wm) + "\n";
  }
  return out;
}

std::string table2_csv(const std::vector<std::pair<std::string, double>>& rows) {
  std::string out = "row,acc\n";
  for (const auto& [name, acc] : rows) out += name + "," + fmt("%.2f", 100.0 * acc) + "\n";
  return out;
}

void write_output(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  detail::write_text(path, text);
}

}  // namespace permweld
