#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "mimictext.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mimictext_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

inline std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

// A three-item CHART_LAB vocabulary with one item per other group.
inline mimictext::FeatureVocabulary small_vocab() {
  using mimictext::DiagnosisCode;
  using mimictext::IcdVersion;
  return mimictext::FeatureVocabulary(
      {{"I10", IcdVersion::Icd10}, {"E11", IcdVersion::Icd10}},
      {{{"220045", "220210", "50912"}, {"225158"}, {"225459"}, {"226559"}}},
      {{"220045", "Heart Rate"},
       {"220210", "Respiratory Rate"},
       {"50912", "Creatinine"},
       {"225158", "NaCl 0.9%"},
       {"225459", "Chest X-Ray"},
       {"226559", "Foley"}},
      {{{"I10", IcdVersion::Icd10}, "Essential (primary) hypertension"},
       {{"E11", IcdVersion::Icd10}, "Type 2 diabetes mellitus"}});
}

inline mimictext::ICUStayRecord small_stay() {
  using mimictext::FeatureGroup;
  mimictext::ICUStayRecord s;
  s.stay_id = "30001";
  s.demographics = {"M", "WHITE", "Other", 55};
  s.diagnoses = {{"I10", mimictext::IcdVersion::Icd10}};
  s.events = {{FeatureGroup::ChartLab, "220045", 10, 72.0},
              {FeatureGroup::Meds, "225158", 30, 5.0},
              {FeatureGroup::Proc, "225459", 200, 1.0},
              {FeatureGroup::Oute, "226559", 400, 1.0}};
  s.label = 1;
  return s;
}

}  // namespace testutil
