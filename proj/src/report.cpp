#include "diffusam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace diffusam {

using nlohmann::json;

ReportFormat report_format_from_string(std::string_view s) {
  if (s == "table" || s == "table_text" || s == "text") return ReportFormat::table_text;
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  if (s == "summary") return ReportFormat::summary;
  throw std::invalid_argument("unknown report format '" + std::string(s) + "'");
}

std::string acc_column_name(double threshold) {
  return "acc" + std::to_string(std::lround(threshold * 100.0));
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string acc_label(double t) {
  std::ostringstream os;
  os << "Acc@" << t;
  return os.str();
}

std::vector<double> thresholds_of(const std::vector<ReportRow>& rows) {
  std::vector<double> ts;
  for (const auto& r : rows)
    for (const auto& [t, _] : r.metrics.acc_at)
      if (std::find(ts.begin(), ts.end(), t) == ts.end()) ts.push_back(t);
  return ts;
}

template <class T>
std::vector<T> unique_in_order(const std::vector<ReportRow>& rows, T ReportRow::*field) {
  std::vector<T> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.*field) == out.end()) out.push_back(r.*field);
  return out;
}

std::optional<double> metric(const MetricsReport& m, int column, const std::vector<double>& ts) {
  if (column == 0) return m.miou;
  const double t = ts[std::size_t(column - 1)];
  for (const auto& [k, v] : m.acc_at)
    if (k == t) return v;
  return std::nullopt;
}

std::string render_table(const std::vector<ReportRow>& rows) {
  const auto models = unique_in_order(rows, &ReportRow::model);
  const auto datasets = unique_in_order(rows, &ReportRow::dataset);
  const auto ts = thresholds_of(rows);
  const int ncols = 1 + int(ts.size());

  std::map<std::pair<std::string, std::string>, const MetricsReport*> cell;
  for (const auto& r : rows) cell[{r.model, r.dataset}] = &r.metrics;

  // Best value per (dataset, column); every tie is marked.
  std::map<std::pair<std::string, int>, double> best;
  for (const auto& r : rows)
    for (int c = 0; c < ncols; ++c)
      if (auto v = metric(r.metrics, c, ts)) {
        auto key = std::make_pair(r.dataset, c);
        auto it = best.find(key);
        if (it == best.end() || *v > it->second) best[key] = *v;
      }

  std::vector<std::string> headers{"mIoU"};
  for (double t : ts) headers.push_back(acc_label(t));

  std::size_t model_w = 5;
  for (const auto& m : models) model_w = std::max(model_w, m.size());
  const std::size_t cell_w = 9;
  const std::size_t group_w = ncols * (cell_w + 1) - 1;

  std::ostringstream os;
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  os << pad("", model_w);
  for (const auto& d : datasets) os << " | " << pad(d, group_w);
  os << '\n' << pad("Model", model_w);
  for (std::size_t g = 0; g < datasets.size(); ++g) {
    os << " |";
    for (const auto& h : headers) os << ' ' << pad(h, cell_w);
  }
  os << '\n' << std::string(model_w, '-');
  for (std::size_t g = 0; g < datasets.size(); ++g) os << "-+" << std::string(group_w + 1, '-');
  os << '\n';
  for (const auto& m : models) {
    os << pad(m, model_w);
    for (const auto& d : datasets) {
      os << " |";
      auto it = cell.find({m, d});
      for (int c = 0; c < ncols; ++c) {
        std::string s = "-";
        if (it != cell.end()) {
          if (auto v = metric(*it->second, c, ts)) {
            s = fixed4(*v);
            if (*v == best[{d, c}]) s += '*';
          }
        }
        os << ' ' << pad(s, cell_w);
      }
    }
    os << '\n';
  }
  return os.str();
}

std::string render_csv(const std::vector<ReportRow>& rows) {
  const auto ts = thresholds_of(rows);
  std::ostringstream os;
  os << "model,dataset,miou";
  for (double t : ts) os << ',' << acc_column_name(t);
  os << '\n';
  for (const auto& r : rows) {
    os << r.model << ',' << r.dataset << ',' << fixed4(r.metrics.miou);
    for (double t : ts) {
      os << ',';
      for (const auto& [k, v] : r.metrics.acc_at)
        if (k == t) os << fixed4(v);
    }
    os << '\n';
  }
  return os.str();
}

json report_json(const ReportRow& r) {
  json acc = json::object();
  for (const auto& [t, v] : r.metrics.acc_at) acc[acc_column_name(t)] = v;
  json per = json::array();
  for (const auto& p : r.metrics.per_task)
    per.push_back({{"task_id", p.task_id}, {"iou", p.iou}, {"provenance", p.provenance}});
  return {{"model", r.model},     {"dataset", r.dataset}, {"n_tasks", r.metrics.n_tasks},
          {"n_scored", r.metrics.n_scored}, {"miou", r.metrics.miou}, {"acc_at", acc},
          {"per_task", per}};
}

}  // namespace

std::string render_report(const std::vector<ReportRow>& rows, ReportFormat format) {
  if (rows.empty()) throw std::invalid_argument("render_report: nothing to report");
  switch (format) {
    case ReportFormat::table_text: return render_table(rows);
    case ReportFormat::csv: return render_csv(rows);
    case ReportFormat::json: {
      json arr = json::array();
      for (const auto& r : rows) arr.push_back(report_json(r));
      return arr.dump(2) + "\n";
    }
    case ReportFormat::summary: {
      std::ostringstream os;
      for (const auto& r : rows) {
        if (rows.size() > 1) os << r.model << ' ' << r.dataset << ' ';
        os << "miou " << fixed4(r.metrics.miou);
        for (const auto& [t, v] : r.metrics.acc_at) os << ' ' << acc_column_name(t) << ' ' << fixed4(v);
        os << '\n';
      }
      return os.str();
    }
  }
  return {};
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("report csv: missing header");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
    return out;
  };
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "model" || header[1] != "dataset" || header[2] != "miou")
    throw std::invalid_argument("report csv: unexpected header '" + line + "'");
  std::vector<double> ts;
  for (std::size_t i = 3; i < header.size(); ++i) {
    if (header[i].rfind("acc", 0) != 0) throw std::invalid_argument("report csv: bad column " + header[i]);
    ts.push_back(std::stod(header[i].substr(3)) / 100.0);
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw std::invalid_argument("report csv: ragged row '" + line + "'");
    ReportRow r{f[0], f[1], {}};
    r.metrics.miou = std::stod(f[2]);
    for (std::size_t i = 0; i < ts.size(); ++i) r.metrics.acc_at.emplace_back(ts[i], std::stod(f[3 + i]));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace diffusam
