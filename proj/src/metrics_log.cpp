#include "lord/metrics_log.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "lord/errors.hpp"

namespace lord {

namespace {

void check_field(const std::string& s, const char* what) {
    if (s.find_first_of(",\n\r") != std::string::npos) {
        throw ValidationError(std::string("metrics log: ") + what + " '" + s + "' contains a separator");
    }
}

std::string row_line(const MetricRow& r) {
    return r.run_id + "," + r.scenario + "," + std::to_string(r.seed) + "," + std::to_string(r.epoch) + "," + r.metric +
           "," + format_double(r.value) + "\n";
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void MetricsLog::append(MetricRow row) {
    check_field(row.run_id, "run id");
    check_field(row.scenario, "scenario");
    check_field(row.metric, "metric");
    rows_.push_back(std::move(row));
}

void MetricsLog::append(const std::string& run_id, const std::string& scenario, std::uint64_t seed, long long epoch,
                        const std::string& metric, double value) {
    append(MetricRow{run_id, scenario, seed, epoch, metric, value});
}

std::string MetricsLog::to_csv() const {
    std::string out = std::string(kHeader) + "\n";
    for (const auto& r : rows_) out += row_line(r);
    return out;
}

MetricsLog MetricsLog::parse(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != kHeader) throw ValidationError("metrics log: missing or wrong header");
    MetricsLog log;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 6) throw ValidationError("metrics log: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
        try {
            log.rows_.push_back(MetricRow{f[0], f[1], std::stoull(f[2]), std::stoll(f[3]), f[4], std::stod(f[5])});
        } catch (const std::logic_error&) {
            throw ValidationError("metrics log: line " + std::to_string(lineno) + " has a malformed number");
        }
    }
    return log;
}

void MetricsLog::append_to_file(const std::filesystem::path& path) const {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::app);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    if (fresh) f << kHeader << "\n";
    for (const auto& r : rows_) f << row_line(r);
}

}  // namespace lord
