#include "cmrl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cmrl::report {

namespace {

// Resolved config minus the settings that only distinguish seeds of one model.
std::string group_key(const cli::ExperimentConfig& cfg) {
  std::istringstream in(cli::render_config(cfg));
  std::string line;
  std::string key;
  while (std::getline(in, line)) {
    if (line.rfind("train.seed", 0) == 0 || line.rfind("sweep.", 0) == 0 ||
        line.rfind("output.dir", 0) == 0) {
      continue;
    }
    key += line;
    key += '\n';
  }
  return key;
}

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::string short_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string model_label(const trainer::TrainConfig& t) {
  std::string label = trainer::to_string(t.agent);
  if (t.agent == trainer::AgentKind::kCmrlCentral || t.agent == trainer::AgentKind::kCmrlMeta) {
    label += "/" + objectives::to_string(t.scheme);
    if (t.granularity == objectives::Granularity::kPerEpisode) label += "/per_episode";
  }
  if (t.divergence.lambda > 0.0) {
    label += "/" + objectives::to_string(t.divergence.kind) + "=" + short_num(t.divergence.lambda);
  } else if (t.agent == trainer::AgentKind::kCmrlCentral || t.agent == trainer::AgentKind::kCmrlMeta) {
    label += "/no_div";
  }
  return label;
}

std::string threshold_name(double th) { return short_num(100.0 * th) + "%"; }

}  // namespace

RunSummary load_run(const std::filesystem::path& dir) {
  const auto cfg_path = dir / "config.cfg";
  const auto metrics_path = dir / "metrics.csv";
  if (!std::filesystem::exists(cfg_path)) throw std::runtime_error("run " + dir.string() + " has no config.cfg");
  if (!std::filesystem::exists(metrics_path)) {
    throw std::runtime_error("run " + dir.string() + " has no metrics.csv");
  }
  RunSummary run;
  run.dir = dir;
  run.config = cli::resolve_config(cli::read_config_file(cfg_path));
  run.curve = eval::read_learning_curve(metrics_path);
  if (run.curve.empty()) throw std::runtime_error("run " + dir.string() + " has no evaluation rows");
  return run;
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stdev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

std::vector<double> default_thresholds(envs::EnvKind kind) {
  if (kind == envs::EnvKind::kMontyHall) return {0.25, 0.50, 0.75, 0.95, 1.0};
  return {0.10, 0.20, 0.40, 1.0};
}

Report build_report(const std::vector<RunSummary>& runs) {
  if (runs.empty()) throw std::invalid_argument("report needs at least one run directory");
  Report rep;
  rep.env_fingerprint = envs::EnvClass(runs.front().config.train.env).fingerprint();
  rep.thresholds = default_thresholds(runs.front().config.train.env.kind);

  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunSummary*>> groups;
  for (const auto& run : runs) {
    const std::string fp = envs::EnvClass(run.config.train.env).fingerprint();
    if (fp != rep.env_fingerprint) {
      throw std::invalid_argument("inconsistent environments: " + rep.env_fingerprint + " vs " + fp + " (" +
                                  run.dir.string() + ")");
    }
    const std::string key = group_key(run.config);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&run);
  }

  for (const auto& key : order) {
    const auto& members = groups.at(key);
    const trainer::TrainConfig& t = members.front()->config.train;
    ModelRow row;
    row.model = model_label(t);
    row.lr = t.lr;
    row.divergence_lambda = t.divergence.lambda;

    std::vector<double> aucs, finals, visited;
    for (const RunSummary* run : members) {
      row.runs.push_back(run->dir);
      aucs.push_back(run->curve.size() >= 2 ? eval::auc(run->curve, t.checkpoint_every) : 0.0);
      finals.push_back(100.0 * run->curve.back().success_rate);
      visited.push_back(run->curve.back().visited_goals);
    }
    row.auc = mean_std(aucs);
    row.final_success = mean_std(finals);
    row.visited_goals = mean_std(visited);

    // Seed-averaged curve over the checkpoints every run reached.
    eval::LearningCurve mean_curve;
    for (std::size_t i = 0;; ++i) {
      bool all = true;
      for (const RunSummary* run : members) {
        if (i >= run->curve.size() || run->curve[i].update != members.front()->curve[i].update) {
          all = false;
          break;
        }
      }
      if (!all) break;
      eval::CurvePoint p;
      p.update = members.front()->curve[i].update;
      for (const RunSummary* run : members) p.success_rate += run->curve[i].success_rate;
      p.success_rate /= static_cast<double>(members.size());
      mean_curve.push_back(p);
    }
    for (double th : rep.thresholds) row.updates_until.push_back(eval::updates_until(mean_curve, th));
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

Report build_report(const std::vector<std::filesystem::path>& run_dirs) {
  std::vector<RunSummary> runs;
  for (const auto& dir : run_dirs) runs.push_back(load_run(dir));
  return build_report(runs);
}

std::string report_csv(const Report& r) {
  std::ostringstream os;
  os << "model,lr,divergence_lambda,seeds,auc_mean,auc_std,final_success_mean,final_success_std";
  for (double th : r.thresholds) os << ",updates_until_" << short_num(100.0 * th);
  os << ",visited_goals_mean,visited_goals_std\n";
  for (const auto& row : r.rows) {
    os << row.model << ',' << short_num(row.lr) << ',' << short_num(row.divergence_lambda) << ','
       << row.runs.size() << ',' << fmt(row.auc.mean, 4) << ',' << fmt(row.auc.stdev, 4) << ','
       << fmt(row.final_success.mean, 4) << ',' << fmt(row.final_success.stdev, 4);
    for (const auto& u : row.updates_until) os << ',' << (u ? std::to_string(*u) : std::string("NA"));
    os << ',' << fmt(row.visited_goals.mean, 4) << ',' << fmt(row.visited_goals.stdev, 4) << '\n';
  }
  return os.str();
}

std::string report_text(const Report& r) {
  std::vector<std::string> header = {"Model", "lr", "Seeds", "AuC", "Final Perf."};
  for (double th : r.thresholds) header.push_back(threshold_name(th));
  header.push_back("Visited Goals");

  std::vector<std::vector<std::string>> cells;
  for (const auto& row : r.rows) {
    std::vector<std::string> line = {
        row.model,
        short_num(row.lr),
        std::to_string(row.runs.size()),
        fmt(row.auc.mean, 1) + " ± " + fmt(row.auc.stdev, 1),
        fmt(row.final_success.mean, 1) + " ± " + fmt(row.final_success.stdev, 1) + "%",
    };
    for (const auto& u : row.updates_until) line.push_back(u ? std::to_string(*u) : std::string("-"));
    line.push_back(fmt(row.visited_goals.mean, 2) + " ± " + fmt(row.visited_goals.stdev, 2));
    cells.push_back(std::move(line));
  }

  // Display width counts code points so the ± sign aligns.
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) widths[c] = width(header[c]);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width(line[c]));
  }
  std::ostringstream os;
  os << "env: " << r.env_fingerprint << '\n';
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) os << "  ";
      os << line[c] << std::string(widths[c] - width(line[c]), ' ');
    }
    os << '\n';
  };
  emit(header);
  for (const auto& line : cells) emit(line);
  return os.str();
}

std::vector<ModelRow> rank_rows(const Report& r) {
  std::vector<ModelRow> rows = r.rows;
  std::stable_sort(rows.begin(), rows.end(), [](const ModelRow& a, const ModelRow& b) {
    if (a.final_success.mean != b.final_success.mean) return a.final_success.mean > b.final_success.mean;
    return a.lr < b.lr;
  });
  return rows;
}

std::string sweep_summary_csv(const Report& r) {
  std::ostringstream os;
  os << "rank,model,lr,divergence_lambda,seeds,final_success_mean,final_success_std,auc_mean,auc_std,"
        "visited_goals_mean\n";
  int rank = 1;
  for (const auto& row : rank_rows(r)) {
    os << rank++ << ',' << row.model << ',' << short_num(row.lr) << ',' << short_num(row.divergence_lambda)
       << ',' << row.runs.size() << ',' << fmt(row.final_success.mean, 4) << ','
       << fmt(row.final_success.stdev, 4) << ',' << fmt(row.auc.mean, 4) << ',' << fmt(row.auc.stdev, 4)
       << ',' << fmt(row.visited_goals.mean, 4) << '\n';
  }
  return os.str();
}

}  // namespace cmrl::report
