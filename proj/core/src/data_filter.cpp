#include "grlab/data_filter.hpp"

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "grlab/parallel.hpp"
#include "grlab/rng.hpp"

namespace grlab {

using nlohmann::json;

void BandSpec::validate() const {
  if (!(0.0 <= low && low <= high && high <= 1.0)) {
    throw std::invalid_argument("band: require 0 <= low <= high <= 1");
  }
}

bool BandSpec::contains(double p) const {
  const bool above = low_inclusive ? p >= low : p > low;
  const bool below = high_inclusive ? p <= high : p < high;
  return above && below;
}

namespace {

void validate_options(const FilterOptions& o) {
  if (o.n < 1) {
    throw std::invalid_argument("filter: n must be >= 1");
  }
  if (!(o.temperature > 0.0)) {
    throw std::invalid_argument("filter: temperature must be > 0");
  }
  if (o.max_new < 0) {
    throw std::invalid_argument("filter: max_new must be >= 0");
  }
  if (o.top_k && (*o.top_k < 1 || *o.top_k > o.n)) {
    throw std::invalid_argument("filter: top_k must be in [1, n]");
  }
}

}  // namespace

FilterRecord estimate_pass_rate(const PolicyParams& params,
                                const Problem& problem,
                                const FilterOptions& options,
                                std::uint64_t seed) {
  validate_options(options);
  const int room = params.arch.max_seq_len - static_cast<int>(problem.prompt.size());
  const int max_new = options.max_new == 0 ? room : std::min(options.max_new, room);
  FilterRecord rec;
  rec.problem_id = problem.id;
  rec.n = options.n;
  rec.seed = seed;
  bool solved_top_k = false;
  for (int j = 1; j <= options.n; ++j) {
    Rollout r = sample_rollout(params, problem.prompt, max_new, options.temperature,
                               seed ^ static_cast<std::uint64_t>(j));
    const Verdict v = verify(problem, r.tokens);
    if (v == Verdict::kCorrect) {
      ++rec.num_correct;
      if (options.top_k && j <= *options.top_k) {
        solved_top_k = true;
      }
    }
    rec.responses.push_back(std::move(r.tokens));
    rec.verdicts.push_back(v);
  }
  rec.pass_rate = static_cast<double>(rec.num_correct) / static_cast<double>(rec.n);
  rec.score = options.top_k ? (solved_top_k ? 1.0 : 0.0) : rec.pass_rate;
  return rec;
}

FilterResult filter_pool(const PolicyParams& params,
                         std::span<const Problem> pool, const BandSpec& band,
                         const FilterOptions& options, std::uint64_t seed) {
  if (pool.empty()) {
    throw std::invalid_argument("filter_pool: empty pool");
  }
  band.validate();
  validate_options(options);
  FilterResult out;
  out.records.resize(pool.size());
  parallel_for(pool.size(), [&](std::size_t i) {
    out.records[i] = estimate_pass_rate(params, pool[i], options,
                                        derive_seed(seed, {i}));
  });
  for (std::size_t i = 0; i < pool.size(); ++i) {
    FilterRecord& rec = out.records[i];
    rec.band_low = band.low;
    rec.band_high = band.high;
    rec.retained = band.contains(rec.score);
    if (rec.retained) {
      out.retained.push_back(pool[i]);
    }
  }
  return out;
}

PrefilterResult prefilter_by_metadata(std::span<const Problem> pool,
                                      double bound) {
  PrefilterResult out;
  for (const auto& p : pool) {
    if (!p.meta_pass_rate) {
      ++out.missing_metadata;
      continue;
    }
    if (*p.meta_pass_rate > 0.0 && *p.meta_pass_rate <= bound) {
      out.kept.push_back(p);
    }
  }
  return out;
}

std::vector<Problem> stratified_balance(std::span<const Problem> pool,
                                        std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].subdomain.empty()) {
      throw std::invalid_argument("stratified_balance: problem " + pool[i].id +
                                  " has no subdomain");
    }
    strata[pool[i].subdomain].push_back(i);
  }
  if (strata.empty()) {
    throw std::invalid_argument("stratified_balance: no strata");
  }
  std::size_t quota = pool.size();
  for (const auto& [_, members] : strata) {
    quota = std::min(quota, members.size());
  }
  std::vector<std::size_t> chosen;
  std::uint64_t stratum_index = 0;
  for (const auto& [_, members] : strata) {
    Rng rng(derive_seed(seed, {stratum_index++}));
    for (std::size_t k : rng.sample_without_replacement(members.size(), quota)) {
      chosen.push_back(members[k]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<Problem> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) {
    out.push_back(pool[i]);
  }
  return out;
}

std::string filter_record_to_json(const FilterRecord& r) {
  json j;
  j["problem_id"] = r.problem_id;
  j["n"] = r.n;
  j["num_correct"] = r.num_correct;
  j["pass_rate"] = r.pass_rate;
  j["score"] = r.score;
  j["retained"] = r.retained;
  j["band_low"] = r.band_low;
  j["band_high"] = r.band_high;
  j["seed"] = r.seed;
  j["responses"] = r.responses;
  json verdicts = json::array();
  for (Verdict v : r.verdicts) {
    verdicts.push_back(std::string(to_string(v)));
  }
  j["verdicts"] = std::move(verdicts);
  return j.dump();
}

FilterRecord filter_record_from_json(std::string_view line) {
  try {
    const json j = json::parse(line);
    FilterRecord r;
    r.problem_id = j.at("problem_id").get<std::string>();
    r.n = j.at("n").get<int>();
    r.num_correct = j.at("num_correct").get<int>();
    r.pass_rate = j.at("pass_rate").get<double>();
    r.score = j.at("score").get<double>();
    r.retained = j.at("retained").get<bool>();
    r.band_low = j.at("band_low").get<double>();
    r.band_high = j.at("band_high").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.responses = j.at("responses").get<std::vector<TokenSeq>>();
    for (const auto& v : j.at("verdicts")) {
      const auto s = v.get<std::string>();
      if (s == "correct") {
        r.verdicts.push_back(Verdict::kCorrect);
      } else if (s == "incorrect") {
        r.verdicts.push_back(Verdict::kIncorrect);
      } else if (s == "unparsable") {
        r.verdicts.push_back(Verdict::kUnparsable);
      } else {
        throw std::invalid_argument("unknown verdict '" + s + "'");
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed filter record: ") + e.what());
  }
}

std::string filter_report_to_jsonl(std::span<const FilterRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += filter_record_to_json(r);
    out += '\n';
  }
  return out;
}

}  // namespace grlab
