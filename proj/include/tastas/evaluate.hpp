// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Test-set scoring of a trained model: per-mixture JSONL rows, a summary
// JSON, and the method-vs-SDRi comparison table built from summaries.

#pragma once

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tastas/mixgen.hpp"
#include "tastas/model.hpp"
#include "tastas/sepmetrics.hpp"

namespace tastas {

inline constexpr const char *kMetricLabel = "SI-SDRi";

struct EvalOptions {
  bool oracle_irm = false;
  // Scores the references themselves as estimates; no model is run.
  bool self_test = false;
  StftParams stft;
};

struct EvalRow {
  std::string id;
  SdriResult final;                 // last stage (or the references in self-test)
  std::vector<double> stage_sdri;   // mean SDRi after each stage
  std::optional<SdriResult> irm;
};

struct EvalReport {
  std::string method;
  std::vector<EvalRow> rows;
  double mean_sdri = 0.0;
  std::vector<double> stage_means;
  std::optional<double> irm_mean_sdri;
};

// `model` may be null only in self-test mode.
inline EvalReport EvaluateCheckpoint(const Model *model, const Manifest &test, const Corpus &corpus,
                                     const EvalOptions &opts = {}) {
  if (!opts.self_test) {
    if (!model) throw InvalidArgument("evaluation needs a model");
    ValidateModel(*model);
    // naive joint training leaves components trained but unfrozen
    auto trained = [](const Component &c) { return c.frozen || c.trained_by == "naive"; };
    if (model->idnet && !trained(*model->idnet)) throw InvalidArgument("incomplete bundle: ID-Net untrained");
    for (const auto &s : model->stages)
      if (!trained(s)) throw InvalidArgument("incomplete bundle: " + s.name + " untrained");
    if (model->spec.num_sources != test.num_sources)
      throw InvalidArgument("model separates " + std::to_string(model->spec.num_sources) + " sources, manifest has " +
                            std::to_string(test.num_sources));
  }
  if (test.records.empty()) throw InvalidArgument("empty test manifest");
  EvalReport rep;
  rep.method = opts.self_test ? "references" : model->spec.Text();
  const size_t n_stages = opts.self_test ? 1 : model->spec.num_stages();
  rep.stage_means.assign(n_stages, 0.0);
  double irm_total = 0.0;
  for (size_t i = 0; i < test.records.size(); ++i) {
    Mixture mix = Synthesize(test.records[i], corpus);
    EvalRow row;
    row.id = test.RecordId(i);
    if (opts.self_test) {
      row.final = Sdri(mix.sources, mix.sources, mix.mixture);
      row.stage_sdri = {row.final.mean};
    } else {
      StageOutput out = Separate(mix.mixture, *model);
      for (size_t k = 0; k < n_stages; ++k) {
        SdriResult r = Sdri(out.stages[k], mix.sources, mix.mixture);
        row.stage_sdri.push_back(r.mean);
        if (k + 1 == n_stages) row.final = r;
      }
    }
    if (opts.oracle_irm) {
      row.irm = Sdri(OracleIrmSeparate(mix.mixture, mix.sources, opts.stft), mix.sources, mix.mixture);
      irm_total += row.irm->mean;
    }
    rep.mean_sdri += row.final.mean;
    for (size_t k = 0; k < n_stages; ++k) rep.stage_means[k] += row.stage_sdri[k];
    rep.rows.push_back(std::move(row));
  }
  const double n = double(rep.rows.size());
  rep.mean_sdri /= n;
  for (double &m : rep.stage_means) m /= n;
  if (opts.oracle_irm) rep.irm_mean_sdri = irm_total / n;
  return rep;
}

inline nlohmann::ordered_json SdriToJson(const SdriResult &r) {
  nlohmann::ordered_json j;
  j["perm"] = r.perm;
  j["si_sdr"] = r.si_sdr;
  j["sdri"] = r.improvement;
  j["mean_sdri"] = r.mean;
  return j;
}

inline std::string ReportToJsonl(const EvalReport &rep) {
  std::string out;
  for (const auto &row : rep.rows) {
    nlohmann::ordered_json j;
    j["id"] = row.id;
    const nlohmann::ordered_json fin = SdriToJson(row.final);
    for (const auto &[k, v] : fin.items()) j[k] = v;
    j["stage_sdri"] = row.stage_sdri;
    if (row.irm) j["irm"] = SdriToJson(*row.irm);
    out += j.dump() + "\n";
  }
  return out;
}

inline nlohmann::ordered_json SummaryToJson(const EvalReport &rep) {
  nlohmann::ordered_json j;
  j["method"] = rep.method;
  j["metric"] = kMetricLabel;
  j["count"] = rep.rows.size();
  j["mean_sdri"] = rep.mean_sdri;
  j["stage_means"] = rep.stage_means;
  if (rep.irm_mean_sdri) j["irm_mean_sdri"] = *rep.irm_mean_sdri;
  return j;
}

// ---- comparison table

struct ReportTableRow {
  std::string method;
  double sdri = 0.0;
  size_t count = 0;
};

// One row per summary (plus an "IRM" row when a summary carries one),
// sorted by SDRi descending; ties keep input order.
inline std::vector<ReportTableRow> BuildReportTable(const std::vector<nlohmann::json> &summaries) {
  std::vector<ReportTableRow> rows;
  for (const auto &s : summaries) {
    try {
      if (s.at("metric").get<std::string>() != kMetricLabel)
        throw InvalidArgument("summary metric is not " + std::string(kMetricLabel));
      rows.push_back({s.at("method").get<std::string>(), s.at("mean_sdri").get<double>(), s.at("count").get<size_t>()});
      if (s.contains("irm_mean_sdri")) rows.push_back({"IRM", s["irm_mean_sdri"].get<double>(), rows.back().count});
    } catch (const nlohmann::json::exception &e) {
      throw FormatError(std::string("malformed summary: ") + e.what());
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto &a, const auto &b) { return a.sdri > b.sdri; });
  return rows;
}

inline std::string ReportTableText(const std::vector<ReportTableRow> &rows) {
  size_t w = 6;
  for (const auto &r : rows) w = std::max(w, r.method.size());
  std::ostringstream os;
  char buf[64];
  os << "Method" << std::string(w - 6 + 2, ' ') << kMetricLabel << " (dB)\n";
  for (const auto &r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f", r.sdri);
    os << r.method << std::string(w - r.method.size() + 2, ' ') << buf << "\n";
  }
  return os.str();
}

inline nlohmann::ordered_json ReportTableJson(const std::vector<ReportTableRow> &rows) {
  nlohmann::ordered_json j;
  j["metric"] = kMetricLabel;
  j["rows"] = nlohmann::json::array();
  for (const auto &r : rows) j["rows"].push_back({{"method", r.method}, {"sdri", r.sdri}, {"count", r.count}});
  return j;
}

}  // namespace tastas
