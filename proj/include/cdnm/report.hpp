#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "cdnm/common.hpp"
#include "cdnm/metrics.hpp"
#include "cdnm/weights_io.hpp"

namespace cdnm {

// Line-delimited report records: one record per line, first token is the
// record type, then space-separated key=value fields in a fixed order.
// Metric values are printed with six decimals so golden files diff cleanly.

inline std::string fmt_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

struct ReportWriter {
    std::vector<std::string> lines;

    void record(const std::string& type,
                const std::vector<std::pair<std::string, std::string>>& fields) {
        std::string line = type;
        for (const auto& [k, v] : fields) line += " " + k + "=" + v;
        lines.push_back(std::move(line));
    }

    void metrics_record(const std::string& type,
                        std::vector<std::pair<std::string, std::string>> head,
                        const MetricValues& values) {
        for (const auto& [k, v] : values) head.emplace_back(k, fmt_metric(v));
        record(type, head);
    }

    std::string text() const {
        std::string out;
        for (const auto& l : lines) {
            out += l;
            out += '\n';
        }
        return out;
    }

    void write(const std::string& path) const {
        const std::string body = text();
        write_file_atomic(path, body.data(), body.size());
    }
};

inline MetricValues fg_metric_values(const FgQualityReport& r) {
    return {{"precision", r.precision}, {"recall", r.recall}, {"fmeasure", r.fmeasure},
            {"fpr", r.fpr},             {"fnr", r.fnr},       {"pwc", r.pwc}};
}

inline MetricValues bg_metric_values(const BgQualityReport& r) {
    MetricValues v = {{"age", r.age},   {"peps", r.peps},       {"pceps", r.pceps},
                      {"psnr", r.psnr}, {"msssim", r.ms_ssim}};
    if (r.has_cqm) v.emplace_back("cqm", r.cqm);
    return v;
}

}  // namespace cdnm
