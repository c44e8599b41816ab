#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace defleye {

/// SHA-1 hex digest of a byte string.
std::string sha1_hex(const std::string& bytes);

/// Git-style blob hash: sha1("blob <len>\0" + content).
std::string git_blob_hash(const std::string& content);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

/// Fixed-format float for CSV output (deterministic across platforms/locales).
std::string csv_number(double v, int decimals = 6);

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    void reset() { start_ = std::chrono::steady_clock::now(); }

private:
    std::chrono::steady_clock::time_point start_;
};

/// Ordered stage -> seconds map for per-stage wall clock reporting.
using StageTimings = std::vector<std::pair<std::string, double>>;

double mean(const std::vector<double>& v);
/// Population standard deviation (divisor n).
double stddev_population(const std::vector<double>& v);
double median(std::vector<double> v);
double rms(const std::vector<double>& v);

/// Spearman rank correlation; ties share averaged ranks.
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace defleye
