#include "corisk/report.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "corisk/error.hpp"

namespace corisk {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kWidth = 480, kHeight = 400, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

LinePlot make_plot(std::string title, std::string x_label, std::string y_label) {
  LinePlot p;
  p.title = std::move(title);
  p.x_label = std::move(x_label);
  p.y_label = std::move(y_label);
  return p;
}

PlotSeries make_series(std::string label, bool step = false) {
  PlotSeries s;
  s.label = std::move(label);
  s.step = step;
  return s;
}

LinePlot roc_plot(const json& table, const std::string& horizon) {
  LinePlot p = make_plot("ROC, " + horizon, "1 - specificity", "sensitivity");
  p.diagonal = true;
  for (const auto& [cutoff, entry] : table.items()) {
    if (!entry.contains("points")) continue;
    PlotSeries s;
    std::ostringstream label;
    label << cutoff << " (" << std::fixed << std::setprecision(3) << entry.at("auc").get<double>() << ")";
    s.label = label.str();
    for (const auto& pt : entry.at("points")) s.points.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
    p.series.push_back(std::move(s));
  }
  return p;
}

}  // namespace

std::string render_svg(const LinePlot& plot) {
  const double w = kWidth - kLeft - kRight, h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + w * x / plot.x_max; };
  auto py = [&](double y) { return kTop + h * (1.0 - y / plot.y_max); };

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kLeft + w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(plot.title)
    << "</text>\n";
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << w << "\" height=\"" << h
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = plot.x_max * i / 4.0, fy = plot.y_max * i / 4.0;
    o << "<text x=\"" << px(fx) << "\" y=\"" << kTop + h + 15 << "\" text-anchor=\"middle\">" << std::setprecision(2)
      << fx << "</text>\n";
    o << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << fy << "</text>\n";
  }
  o << "<text x=\"" << kLeft + w / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
    << escape(plot.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << kTop + h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(plot.y_label) << "</text>\n";
  if (plot.diagonal) {
    o << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(plot.x_max) << "\" y2=\"" << py(plot.y_max)
      << "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      if (s.step && i > 0) o << px(s.points[i].first) << ',' << py(s.points[i - 1].second) << ' ';
      o << px(s.points[i].first) << ',' << py(s.points[i].second) << ' ';
    }
    o << "\"/>\n";
    const double ly = kTop + 14 + 16 * static_cast<double>(k);
    o << "<line x1=\"" << kLeft + w + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kLeft + w + 28 << "\" y2=\"" << ly - 4
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kLeft + w + 32 << "\" y=\"" << ly << "\">" << escape(s.label) << "</text>\n";
  }
  for (const auto& m : plot.markers) {
    o << "<circle cx=\"" << px(m.x) << "\" cy=\"" << py(m.y) << "\" r=\"4\" fill=\"black\"/>\n";
    o << "<text x=\"" << px(m.x) + 7 << "\" y=\"" << py(m.y) - 6 << "\">" << escape(m.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<fs::path> write_report(const json& report, const fs::path& dir, bool plots) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create report directory '" + dir.string() + "': " + ec.message());
  std::vector<fs::path> written;
  const fs::path json_path = dir / "report.json";
  write_text(json_path, report.dump(2) + "\n");
  written.push_back(json_path);
  if (!plots) return written;

  auto emit = [&](const std::string& name, const LinePlot& plot) {
    const fs::path path = dir / name;
    write_text(path, render_svg(plot));
    written.push_back(path);
  };

  if (report.contains("roc")) {
    for (const auto& [horizon, table] : report.at("roc").items()) emit("roc_" + horizon + ".svg", roc_plot(table, horizon));
  }

  const json* phys = report.contains("physician_comparison") ? &report.at("physician_comparison") : nullptr;
  if (phys && phys->contains("corisk_roc")) {
    LinePlot p = make_plot("ICU vs floor against MV within 72h", "1 - specificity", "sensitivity");
    p.diagonal = true;
    PlotSeries s = make_series("CO-RISK 72h");
    for (const auto& pt : phys->at("corisk_roc").at("points")) s.points.emplace_back(pt.at(0), pt.at(1));
    p.series.push_back(std::move(s));
    const auto& doc = phys->at("physician");
    p.markers.push_back({"physician", 1.0 - doc.at("specificity").get<double>(), doc.at("sensitivity").get<double>()});
    emit("physician.svg", p);
  }

  if (report.contains("risk_bands")) {
    LinePlot p = make_plot("30-day survival by risk band", "days", "survival");
    p.x_max = 30.0;
    for (const auto& [band, entry] : report.at("risk_bands").at("bands").items()) {
      if (!entry.contains("km_steps")) continue;
      PlotSeries s = make_series(band + " (n=" + std::to_string(entry.at("n").get<std::size_t>()) + ")", true);
      s.points.emplace_back(0.0, 1.0);
      for (const auto& st : entry.at("km_steps")) s.points.emplace_back(st.at(0), st.at(1));
      s.points.emplace_back(30.0, s.points.back().second);
      p.series.push_back(std::move(s));
    }
    emit("km_bands.svg", p);
  }

  for (const char* score : {"curb65", "mews"}) {
    const json* cs = report.contains("clinical_scores") ? &report.at("clinical_scores").at(score) : nullptr;
    if (!cs) continue;
    LinePlot p = make_plot(std::string("CO-RISK vs ") + score + ", MV or death 72h", "1 - specificity", "sensitivity");
    p.diagonal = true;
    for (const auto& [name, entry] : cs->at("MV_or_death_72h").items()) {
      if (!entry.contains("points")) continue;
      PlotSeries s = make_series(name);
      for (const auto& pt : entry.at("points")) s.points.emplace_back(pt.at(0), pt.at(1));
      p.series.push_back(std::move(s));
    }
    emit(std::string("roc_") + score + ".svg", p);
  }
  return written;
}

}  // namespace corisk
