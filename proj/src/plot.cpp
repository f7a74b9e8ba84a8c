#include "gradalign/plot.hpp"

#include "gradalign/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>

namespace gradalign {

namespace {

std::string fixed(double v, int digits = 2) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  std::string s(buf, res.ptr);
  return s == "-0.00" ? "0.00" : s;
}

std::string label(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 4);
  return std::string(buf, res.ptr);
}

std::optional<double> column(const TraceRecord& r, const std::string& name) {
  if (name == "loss") return r.loss;
  if (name == "grad_norm") return r.grad_norm;
  if (name == "train_error") return r.train_error;
  if (name == "q_t") return static_cast<double>(r.q_t);
  if (name == "rel_residual") return r.rel_residual;
  if (name == "drift") return r.drift;
  throw ContractError("unknown plot series '" + name + "'");
}

bool logarithmic(const std::string& name) {
  return name == "loss" || name == "grad_norm" || name == "rel_residual" || name == "drift";
}

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

}  // namespace

std::vector<std::string> plot_series_names() {
  return {"loss", "grad_norm", "train_error", "rel_residual", "q_t", "drift"};
}

std::string plot_trace(const TrainTrace& trace, const PlotOptions& options) {
  if (trace.empty()) throw ContractError("cannot plot an empty trace");
  if (options.series.empty()) throw ContractError("no series to plot");
  for (const auto& name : options.series) (void)column(trace.front(), name);

  const double left = 70.0;
  const double right = 20.0;
  const double top = options.title.empty() ? 10.0 : 30.0;
  const double gap = 30.0;
  const double plot_w = options.width - left - right;
  const double plot_h = options.panel_height - gap;
  const int height =
      static_cast<int>(top) + options.panel_height * static_cast<int>(options.series.size()) + 10;

  const double step_min = static_cast<double>(trace.front().step);
  const double step_max = std::max(step_min + 1.0, static_cast<double>(trace.back().step));

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(options.width) + "\" height=\"" + std::to_string(height) +
                    "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!options.title.empty()) {
    svg += "<text x=\"" + fixed(options.width / 2.0) +
           "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" + escape(options.title) +
           "</text>\n";
  }

  for (std::size_t p = 0; p < options.series.size(); ++p) {
    const std::string& name = options.series[p];
    const bool use_log = options.log_loss && logarithmic(name);
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : trace) {
      auto v = column(r, name);
      if (!v || !std::isfinite(*v)) continue;
      if (use_log) {
        if (*v <= 0.0) continue;
        v = std::log10(*v);
      }
      pts.emplace_back(static_cast<double>(r.step), *v);
    }
    const double y0 = top + static_cast<double>(p) * options.panel_height;
    svg += "<g>\n<rect x=\"" + fixed(left) + "\" y=\"" + fixed(y0) + "\" width=\"" +
           fixed(plot_w) + "\" height=\"" + fixed(plot_h) +
           "\" fill=\"none\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + fixed(left + 4) + "\" y=\"" + fixed(y0 + 14) + "\">" +
           escape(use_log ? "log10 " + name : name) + "</text>\n";
    svg += "<text x=\"" + fixed(left) + "\" y=\"" + fixed(y0 + plot_h + 14) +
           "\" text-anchor=\"start\">" + label(step_min) + "</text>\n";
    svg += "<text x=\"" + fixed(left + plot_w) + "\" y=\"" + fixed(y0 + plot_h + 14) +
           "\" text-anchor=\"end\">" + label(step_max) + "</text>\n";
    if (pts.empty()) {
      svg += "<text x=\"" + fixed(left + plot_w / 2) + "\" y=\"" + fixed(y0 + plot_h / 2) +
             "\" text-anchor=\"middle\">no data</text>\n</g>\n";
      continue;
    }
    double lo = pts.front().second;
    double hi = lo;
    for (const auto& [x, y] : pts) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    svg += "<text x=\"" + fixed(left - 4) + "\" y=\"" + fixed(y0 + 10) +
           "\" text-anchor=\"end\">" + label(hi) + "</text>\n";
    svg += "<text x=\"" + fixed(left - 4) + "\" y=\"" + fixed(y0 + plot_h) +
           "\" text-anchor=\"end\">" + label(lo) + "</text>\n";
    svg += "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double px = left + (pts[i].first - step_min) / (step_max - step_min) * plot_w;
      const double py = y0 + plot_h - (pts[i].second - lo) / (hi - lo) * plot_h;
      svg += (i ? " " : "") + fixed(px) + "," + fixed(py);
    }
    svg += "\"/>\n</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace gradalign
