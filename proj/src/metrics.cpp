#include "qsim/metrics.hpp"

#include <json.hpp>

#include <cstdio>
#include <stdexcept>

namespace qsim {

const char* MetricsWriter::header() {
  return "step,variant,seed,eval_return,td_loss,ae_loss,mean_target,mean_qtot,delta_q,epsilon,kappa";
}

MetricsWriter::MetricsWriter(const std::string& path, std::string variant, std::uint64_t seed)
    : out_(path), variant_(std::move(variant)), seed_(seed) {
  if (!out_) throw std::runtime_error("cannot open metrics file for writing: " + path);
  out_ << header() << '\n';
}

void MetricsWriter::append(const Row& row) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%lld,%s,%llu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                static_cast<long long>(row.step), variant_.c_str(),
                static_cast<unsigned long long>(seed_), row.eval_return, row.td_loss, row.ae_loss,
                row.mean_target, row.mean_qtot, row.delta_q, row.epsilon, row.kappa);
  out_ << buf;
}

void MetricsWriter::flush() { out_.flush(); }

void write_manifest(const std::string& run_dir, const std::string& config_echo_json,
                    std::uint64_t config_hash, std::uint64_t seed) {
  nlohmann::json manifest;
  manifest["schema"] = "qsim-lab-run-v1";
  manifest["seed"] = seed;
  manifest["config"] = nlohmann::json::parse(config_echo_json);
  char hash[32];
  std::snprintf(hash, sizeof(hash), "fnv1a64:%016llx", static_cast<unsigned long long>(config_hash));
  manifest["config_hash"] = hash;

  const std::string path = run_dir + "/manifest.json";
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << manifest.dump(2) << '\n';
}

}  // namespace qsim
