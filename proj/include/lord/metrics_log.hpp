#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lord {

struct MetricRow {
    std::string run_id;
    std::string scenario;
    std::uint64_t seed = 0;
    long long epoch = -1;  // -1 for run-level metrics
    std::string metric;
    double value = 0.0;
};

// CSV metrics with a fixed header. Values print at 17 significant digits so
// they parse back to the same double.
class MetricsLog {
public:
    static constexpr const char* kHeader = "run_id,scenario,seed,epoch,metric,value";

    void append(MetricRow row);
    void append(const std::string& run_id, const std::string& scenario, std::uint64_t seed, long long epoch,
                const std::string& metric, double value);
    const std::vector<MetricRow>& rows() const { return rows_; }

    std::string to_csv() const;
    static MetricsLog parse(const std::string& csv);

    // Appends rows to an existing file (writing the header if the file is new).
    void append_to_file(const std::filesystem::path& path) const;

private:
    std::vector<MetricRow> rows_;
};

std::string format_double(double v);

}  // namespace lord
