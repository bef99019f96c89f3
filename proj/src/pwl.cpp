#include "nact/pwl.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace nact {
namespace {

constexpr double kSlopeMergeTol = 1e-12;

void require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorCode::InvalidArgument, what);
}

int segment_index(const std::vector<double>& bps, double x) {
  // Index j such that x lies in segment j: slopes[j] applies on
  // (bps[j-1], bps[j]); ties at a breakpoint resolve to the right segment.
  return static_cast<int>(std::upper_bound(bps.begin(), bps.end(), x) -
                          bps.begin());
}

}  // namespace

CpwlFunction CpwlFunction::make(std::vector<double> breakpoints,
                                std::vector<double> slopes,
                                std::pair<double, double> anchor) {
  require(slopes.size() == breakpoints.size() + 1,
          "slopes must have exactly one more entry than breakpoints");
  require(std::isfinite(anchor.first) && std::isfinite(anchor.second),
          "anchor must be finite");
  for (double t : breakpoints)
    require(std::isfinite(t), "breakpoints must be finite");
  for (double s : slopes) {
    require(std::isfinite(s), "slopes must be finite");
    require(std::abs(s) <= 1.0, "slopes must satisfy |s| <= 1");
  }
  for (size_t i = 1; i < breakpoints.size(); ++i)
    require(breakpoints[i] > breakpoints[i - 1],
            "breakpoints must be strictly increasing");

  // Merge adjacent equal slopes so k equals the true non-linearity count.
  std::vector<double> bps, sls;
  sls.push_back(slopes[0]);
  for (size_t i = 0; i < breakpoints.size(); ++i) {
    if (std::abs(slopes[i + 1] - sls.back()) <= kSlopeMergeTol) continue;
    bps.push_back(breakpoints[i]);
    sls.push_back(slopes[i + 1]);
  }

  CpwlFunction f;
  f.breakpoints_ = std::move(bps);
  f.slopes_ = std::move(sls);
  f.anchor_ = anchor;

  const auto& b = f.breakpoints_;
  const auto& s = f.slopes_;
  const int k = static_cast<int>(b.size());
  f.values_.assign(k, 0.0);
  if (k > 0) {
    // Value at the breakpoint nearest the anchor, then accumulate outward.
    const auto [x0, y0] = anchor;
    int j = segment_index(b, x0);
    int start = (j == 0) ? 0 : j - 1;
    f.values_[start] = y0 + s[j] * (b[start] - x0);
    for (int i = start + 1; i < k; ++i)
      f.values_[i] = f.values_[i - 1] + s[i] * (b[i] - b[i - 1]);
    for (int i = start - 1; i >= 0; --i)
      f.values_[i] = f.values_[i + 1] - s[i + 1] * (b[i + 1] - b[i]);
  }
  return f;
}

double CpwlFunction::eval(double x) const {
  if (breakpoints_.empty())
    return anchor_.second + slopes_[0] * (x - anchor_.first);
  int j = segment_index(breakpoints_, x);
  if (j == 0) return values_[0] + slopes_[0] * (x - breakpoints_[0]);
  return values_[j - 1] + slopes_[j] * (x - breakpoints_[j - 1]);
}

CpwlFunction n_function() {
  return CpwlFunction::make({-0.5, 0.5}, {1.0, -1.0, 1.0}, {0.0, 0.0});
}

std::vector<Extreme> extremes(const CpwlFunction& f) {
  const auto& s = f.slopes();
  const auto& b = f.breakpoints();
  std::vector<int> nz;
  for (size_t j = 0; j < s.size(); ++j)
    if (s[j] != 0.0) nz.push_back(static_cast<int>(j));
  std::vector<Extreme> out;
  for (size_t m = 0; m + 1 < nz.size(); ++m) {
    int p = nz[m], q = nz[m + 1];
    if ((s[p] > 0.0) == (s[q] > 0.0)) continue;
    // Segment p ends at breakpoint b[p]; a plateau between p and q starts
    // there, so this is the plateau's left edge.
    out.push_back({b[p], s[p] > 0.0});
  }
  return out;
}

double max_abs_diff(const CpwlFunction& f,
                    const std::function<double(double)>& g, double lo,
                    double hi, int* probe_count) {
  require(lo < hi, "probe interval must satisfy lo < hi");
  std::vector<double> probes{lo, hi};
  std::vector<double> knots{lo};
  for (double t : f.breakpoints())
    if (t > lo && t < hi) knots.push_back(t);
  knots.push_back(hi);
  for (size_t i = 0; i + 1 < knots.size(); ++i) {
    probes.push_back(knots[i]);
    probes.push_back(0.5 * (knots[i] + knots[i + 1]));
  }
  const int grid = 1000;
  for (int i = 0; i < grid; ++i)
    probes.push_back(lo + (hi - lo) * i / (grid - 1));

  double worst = 0.0;
  for (double x : probes) {
    double gx = g(x);
    if (!std::isfinite(gx))
      throw Error(ErrorCode::CheckFailed,
                  "comparison function returned a non-finite value at x=" +
                      std::to_string(x));
    worst = std::max(worst, std::abs(f.eval(x) - gx));
  }
  if (probe_count) *probe_count = static_cast<int>(probes.size());
  return worst;
}

CpwlFunction random_cpwl(int k, double lo, double hi, std::mt19937_64& rng) {
  require(k >= 0, "k must be nonnegative");
  require(lo < hi, "need lo < hi");
  std::uniform_real_distribution<double> in_range(lo, hi);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  std::vector<double> bps(k);
  const double min_gap = 1e-9 * (hi - lo);
  for (;;) {
    for (auto& t : bps) t = in_range(rng);
    std::sort(bps.begin(), bps.end());
    bool ok = true;
    for (int i = 1; i < k; ++i)
      if (bps[i] - bps[i - 1] <= min_gap) ok = false;
    if (ok) break;
  }

  std::vector<double> slopes(k + 1);
  for (int i = 0; i <= k; ++i) {
    // Near-zero slopes are rejected: a compiled tail of slope s places
    // auxiliary breakpoints at distance O(1/|s|), and bias magnitudes that
    // large erode the exactness budget of downstream verification.
    double s = unit(rng);
    while (std::abs(s) < 1e-3 ||
           (i > 0 && std::abs(s - slopes[i - 1]) <= 1e-6))
      s = unit(rng);
    slopes[i] = s;
  }
  return CpwlFunction::make(std::move(bps), std::move(slopes),
                            {0.5 * (lo + hi), unit(rng)});
}

CpwlFunction cpwl_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::Parse, std::string("invalid JSON: ") + e.what());
  }
  try {
    auto bps = j.at("breakpoints").get<std::vector<double>>();
    auto slopes = j.at("slopes").get<std::vector<double>>();
    auto anchor = j.at("anchor").get<std::vector<double>>();
    if (anchor.size() != 2)
      throw Error(ErrorCode::Parse, "anchor must be [x0, y0]");
    return CpwlFunction::make(std::move(bps), std::move(slopes),
                              {anchor[0], anchor[1]});
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::Parse,
                std::string("malformed function spec: ") + e.what());
  }
}

std::string cpwl_to_json(const CpwlFunction& f) {
  nlohmann::json j;
  j["breakpoints"] = f.breakpoints();
  j["slopes"] = f.slopes();
  j["anchor"] = {f.anchor().first, f.anchor().second};
  return j.dump();
}

}  // namespace nact
