#pragma once
// Static report over persisted ResultRecords: markdown tables (best per column in
// bold), grouped bar charts as SVG and a JSON summary. Output depends only on
// the records, so regenerating from the same files gives identical bytes.

#include "csad/eval.hpp"

#include <cstdio>
#include <map>

namespace csad {

struct ReportBundle {
    std::map<std::string, std::string> files;  // relative path -> content
};

namespace report_detail {

inline const std::vector<std::string>& strategy_order() {
    static const std::vector<std::string> order{"naive", "joint", "ewc", "or"};
    return order;
}

inline const std::vector<std::string>& dataset_order() {
    static const std::vector<std::string> order{"mnist", "cifar10", "fashion_mnist"};
    return order;
}

inline std::size_t rank_in(const std::vector<std::string>& order, const std::string& v) {
    const auto it = std::find(order.begin(), order.end(), v);
    return static_cast<std::size_t>(it - order.begin());
}

inline std::string strategy_label(const std::string& s) {
    if (s == "naive") return "Naive";
    if (s == "joint") return "Joint";
    if (s == "ewc") return "EWC";
    if (s == "or") return "Outlier Rejection";
    return s;
}

inline std::string dataset_label(const std::string& d) {
    if (d == "mnist") return "MNIST";
    if (d == "fashion_mnist") return "Fashion MNIST";
    if (d == "cifar10") return "CIFAR10";
    return d;
}

inline std::string strategy_colour(const std::string& s) {
    if (s == "naive") return "#1f77b4";
    if (s == "joint") return "#ff7f0e";
    if (s == "ewc") return "#2ca02c";
    if (s == "or") return "#9467bd";
    return "#7f7f7f";
}

inline std::string fmt(double v, int digits = 3) {
    if (std::isnan(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct Stat {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = 0.0;
    std::size_t n = 0;
};

inline Stat stat_of(const std::vector<double>& xs) {
    Stat s;
    std::vector<double> v;
    for (double x : xs)
        if (!std::isnan(x)) v.push_back(x);
    s.n = v.size();
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

/// experiment -> dataset -> strategy -> records (seed order)
using Grouped = std::map<int, std::map<std::string, std::map<std::string, std::vector<const ResultRecord*>>>>;

inline std::vector<std::string> ordered_keys(const std::vector<std::string>& order, std::vector<std::string> keys) {
    std::sort(keys.begin(), keys.end(), [&](const std::string& a, const std::string& b) {
        return std::make_pair(rank_in(order, a), a) < std::make_pair(rank_in(order, b), b);
    });
    return keys;
}

inline double mean_forgetting(const ResultRecord& r) {
    std::vector<double> f;
    for (std::size_t i = 0; i + 1 < r.forgetting.size(); ++i)  // the last experience cannot be forgotten
        if (auto v = r.forgetting[i].forgetting()) f.push_back(*v);
    return stat_of(f).mean;
}

inline std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& datasets,
                                 const std::vector<std::string>& strategies,
                                 const std::map<std::string, std::map<std::string, Stat>>& cells) {
    const int width = 640, height = 360, left = 56, right = 16, top = 40, bottom = 64;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(1, datasets.size()));
    const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, strategies.size()));
    auto y_of = [&](double v) { return top + plot_h * (1.0 - v); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
    for (int t = 0; t <= 10; t += 2) {
        const double v = t / 10.0;
        os << "<line x1=\"" << left << "\" x2=\"" << width - right << "\" y1=\"" << fmt(y_of(v), 1) << "\" y2=\""
           << fmt(y_of(v), 1) << "\" stroke=\"#dddddd\" stroke-dasharray=\"3,3\"/>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << fmt(y_of(v) + 4, 1) << "\" text-anchor=\"end\">" << fmt(v, 1)
           << "</text>\n";
    }
    os << "<text x=\"14\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 14 " << top + plot_h / 2
       << ")\" text-anchor=\"middle\">AUC</text>\n";
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        const double gx = left + group_w * static_cast<double>(d) + group_w * 0.1;
        for (std::size_t s = 0; s < strategies.size(); ++s) {
            const auto dit = cells.find(datasets[d]);
            if (dit == cells.end()) continue;
            const auto sit = dit->second.find(strategies[s]);
            if (sit == dit->second.end() || std::isnan(sit->second.mean)) continue;
            const double v = std::clamp(sit->second.mean, 0.0, 1.0);
            const double x = gx + bar_w * static_cast<double>(s);
            os << "<rect x=\"" << fmt(x, 1) << "\" y=\"" << fmt(y_of(v), 1) << "\" width=\"" << fmt(bar_w * 0.95, 1)
               << "\" height=\"" << fmt(plot_h * v, 1) << "\" fill=\"" << strategy_colour(strategies[s]) << "\"><title>"
               << strategy_label(strategies[s]) << ": " << fmt(sit->second.mean) << "</title></rect>\n";
        }
        os << "<text x=\"" << fmt(left + group_w * (static_cast<double>(d) + 0.5), 1) << "\" y=\""
           << top + plot_h + 16 << "\" text-anchor=\"middle\">" << dataset_label(datasets[d]) << "</text>\n";
    }
    for (std::size_t s = 0; s < strategies.size(); ++s) {
        const double x = left + 130.0 * static_cast<double>(s);
        const double y = height - 20;
        os << "<rect x=\"" << fmt(x, 1) << "\" y=\"" << fmt(y - 9, 1) << "\" width=\"10\" height=\"10\" fill=\""
           << strategy_colour(strategies[s]) << "\"/>\n";
        os << "<text x=\"" << fmt(x + 14, 1) << "\" y=\"" << fmt(y, 1) << "\">" << strategy_label(strategies[s])
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace report_detail

/// Reads every ResultRecord below `root` (files named <seed>.json).
inline std::vector<ResultRecord> load_records(const std::filesystem::path& root) {
    std::vector<ResultRecord> out;
    if (!std::filesystem::exists(root)) return out;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "failures.json")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        try {
            out.push_back(read_result(f));
        } catch (const std::exception& ex) {
            warn("report: skipping " + f.string() + ": " + ex.what());
        }
    }
    return out;
}

/// `titles` optionally maps experiment ids to human-readable names.
inline ReportBundle emit_report(const std::vector<ResultRecord>& records, const std::map<int, std::string>& titles = {}) {
    using namespace report_detail;
    Grouped g;
    for (const auto& r : records) g[r.experiment_id][r.dataset][r.strategy].push_back(&r);
    for (auto& [id, byds] : g)
        for (auto& [ds, bys] : byds)
            for (auto& [st, v] : bys)
                std::sort(v.begin(), v.end(), [](const ResultRecord* a, const ResultRecord* b) { return a->seed < b->seed; });

    ReportBundle b;
    std::ostringstream md;
    nlohmann::json summary = nlohmann::json::object();
    md << "# Results\n\n";
    md << "Mean AUC over seeds (standard deviation in parentheses, seed count in brackets). "
          "Best value per column in bold.\n";

    for (const auto& [id, byds] : g) {
        std::vector<std::string> ds_keys, st_keys;
        for (const auto& [ds, bys] : byds) {
            ds_keys.push_back(ds);
            for (const auto& [st, v] : bys)
                if (std::find(st_keys.begin(), st_keys.end(), st) == st_keys.end()) st_keys.push_back(st);
        }
        ds_keys = ordered_keys(dataset_order(), ds_keys);
        st_keys = ordered_keys(strategy_order(), st_keys);

        std::map<std::string, std::map<std::string, Stat>> auc, forget;
        for (const auto& ds : ds_keys)
            for (const auto& st : st_keys) {
                const auto it = byds.at(ds).find(st);
                if (it == byds.at(ds).end()) continue;
                std::vector<double> a, f;
                for (const auto* r : it->second) {
                    a.push_back(r->mean_auc);
                    f.push_back(mean_forgetting(*r));
                }
                auc[ds][st] = stat_of(a);
                forget[ds][st] = stat_of(f);
            }

        const auto title = titles.count(id) ? titles.at(id) : std::string();
        md << "\n## Experiment " << id << (title.empty() ? "" : ": " + title) << "\n\n";

        auto table = [&](const std::map<std::string, std::map<std::string, Stat>>& cells, bool higher_better) {
            md << "| Strategy |";
            for (const auto& ds : ds_keys) md << ' ' << dataset_label(ds) << " |";
            md << "\n|---|";
            for (std::size_t i = 0; i < ds_keys.size(); ++i) md << "---|";
            md << '\n';
            std::map<std::string, double> best;
            for (const auto& ds : ds_keys) {
                double bv = std::numeric_limits<double>::quiet_NaN();
                for (const auto& [st, s] : cells.count(ds) ? cells.at(ds) : std::map<std::string, Stat>{})
                    if (!std::isnan(s.mean) && (std::isnan(bv) || (higher_better ? s.mean > bv : s.mean < bv)))
                        bv = s.mean;
                best[ds] = bv;
            }
            for (const auto& st : st_keys) {
                md << "| " << strategy_label(st) << " |";
                for (const auto& ds : ds_keys) {
                    const auto dit = cells.find(ds);
                    if (dit == cells.end() || !dit->second.count(st)) {
                        md << " - |";
                        continue;
                    }
                    const auto& s = dit->second.at(st);
                    // Ties at the printed precision share the bold mark.
                    const bool is_best = !std::isnan(s.mean) && fmt(s.mean) == fmt(best[ds]);
                    const auto cell = fmt(s.mean) + " (" + fmt(s.sd) + ") [" + std::to_string(s.n) + "]";
                    md << ' ' << (is_best ? "**" + cell + "**" : cell) << " |";
                }
                md << '\n';
            }
        };
        md << "### Mean AUC\n\n";
        table(auc, true);
        md << "\n### Mean forgetting (AUC right after each experience minus final AUC; lower is better)\n\n";
        table(forget, false);

        for (const auto& ds : ds_keys) {
            std::size_t n_ep = 0;
            for (const auto& [st, v] : byds.at(ds))
                for (const auto* r : v) n_ep = std::max(n_ep, r->episodes.size());
            if (n_ep == 0) continue;
            md << "\n### Per-episode AUC, " << dataset_label(ds) << "\n\n| Strategy |";
            for (std::size_t e = 0; e < n_ep; ++e) md << ' ' << e + 1 << " |";
            md << "\n|---|";
            for (std::size_t e = 0; e < n_ep; ++e) md << "---|";
            md << '\n';
            for (const auto& st : st_keys) {
                const auto it = byds.at(ds).find(st);
                if (it == byds.at(ds).end()) continue;
                md << "| " << strategy_label(st) << " |";
                for (std::size_t e = 0; e < n_ep; ++e) {
                    std::vector<double> v;
                    for (const auto* r : it->second)
                        if (e < r->episodes.size() && r->episodes[e].auc) v.push_back(*r->episodes[e].auc);
                    md << ' ' << fmt(stat_of(v).mean) << " |";
                }
                md << '\n';
            }
        }

        const auto svg_name = "experiment_" + std::to_string(id) + ".svg";
        b.files[svg_name] = bar_chart_svg("Experiment " + std::to_string(id) + (title.empty() ? "" : ": " + title),
                                          ds_keys, st_keys, auc);
        md << "\n![Experiment " << id << "](" << svg_name << ")\n";

        auto& sj = summary[std::to_string(id)];
        for (const auto& ds : ds_keys)
            for (const auto& st : st_keys)
                if (auc[ds].count(st))
                    sj[ds][st] = {{"mean_auc", std::isnan(auc[ds][st].mean) ? nlohmann::json(nullptr)
                                                                            : nlohmann::json(auc[ds][st].mean)},
                                  {"sd", auc[ds][st].sd},
                                  {"n_seeds", auc[ds][st].n},
                                  {"mean_forgetting", std::isnan(forget[ds][st].mean)
                                                          ? nlohmann::json(nullptr)
                                                          : nlohmann::json(forget[ds][st].mean)}};
    }
    b.files["report.md"] = md.str();
    b.files["summary.json"] = summary.dump(2) + "\n";
    return b;
}

inline void write_report(const ReportBundle& b, const std::filesystem::path& out_dir) {
    for (const auto& [name, content] : b.files) atomic_write(out_dir / name, content);
}

}  // namespace csad
