#pragma once

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "seenet/graph.hpp"

namespace seenet {

/// 1-based rank of `target` when candidates are sorted by descending score, ties broken by ascending id.
/// Candidates flagged in `skip` (other than the target) do not compete.
inline std::size_t rank_of(std::span<const double> scores, std::size_t target, const std::vector<bool>& skip = {}) {
    if (target >= scores.size()) throw ContractError("rank_of: target outside the candidate set");
    const double s = scores[target];
    std::size_t rank = 1;
    for (std::size_t v = 0; v < scores.size(); ++v) {
        if (v == target || (!skip.empty() && skip[v])) continue;
        if (scores[v] > s || (scores[v] == s && v < target)) ++rank;
    }
    return rank;
}

struct RankMetrics {
    double mrr = 0.0;
    double hr = 0.0;
    std::size_t count = 0;
};

/// MRR@k and HR@k over a list of 1-based ranks.
inline RankMetrics ranking_metrics(std::span<const std::size_t> ranks, std::size_t k) {
    RankMetrics m;
    m.count = ranks.size();
    if (ranks.empty()) return m;
    for (std::size_t r : ranks) {
        if (r == 0) throw ContractError("ranking_metrics: ranks are 1-based");
        if (r <= k) {
            m.mrr += 1.0 / double(r);
            m.hr += 1.0;
        }
    }
    m.mrr /= double(ranks.size());
    m.hr /= double(ranks.size());
    return m;
}

/// Per-segment and overall MRR@k / HR@k.
struct RankingReport {
    std::size_t k = 10;
    std::vector<RankMetrics> per_segment;
    RankMetrics overall;

    void write_csv(std::ostream& os) const {
        os << "segment,metric,k,value,test_size\n";
        auto row = [&](const std::string& seg, const RankMetrics& m) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", m.mrr);
            os << seg << ",MRR," << k << ',' << buf << ',' << m.count << '\n';
            std::snprintf(buf, sizeof buf, "%.17g", m.hr);
            os << seg << ",HR," << k << ',' << buf << ',' << m.count << '\n';
        };
        for (Segment t = 0; t < per_segment.size(); ++t) row(segment_name(t), per_segment[t]);
        row("overall", overall);
    }

    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw InputError("cannot write '" + path + "'");
        write_csv(f);
    }

    std::string table() const {
        std::ostringstream os;
        os << std::left << std::setw(10) << "segment" << std::right << std::setw(10) << ("MRR@" + std::to_string(k))
           << std::setw(10) << ("HR@" + std::to_string(k)) << std::setw(8) << "size" << '\n';
        os << std::fixed << std::setprecision(4);
        auto row = [&](const std::string& seg, const RankMetrics& m) {
            os << std::left << std::setw(10) << seg << std::right << std::setw(10) << m.mrr << std::setw(10) << m.hr
               << std::setw(8) << m.count << '\n';
        };
        for (Segment t = 0; t < per_segment.size(); ++t) row(segment_name(t), per_segment[t]);
        row("overall", overall);
        return os.str();
    }
};

}  // namespace seenet
