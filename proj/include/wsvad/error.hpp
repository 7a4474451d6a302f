#pragma once

#include <stdexcept>
#include <string>

namespace wsvad {

enum class Errc {
  io_failure,
  bad_magic,
  version_mismatch,
  truncated,
  non_finite,
  bad_format,
  invalid_config,
  shape_mismatch,
  dimension_mismatch,
  single_class_labels,
  unknown_path,
  invalid_flags,
  non_finite_loss,
  empty_label,
};

// All recoverable failures surface as Error; the code distinguishes the
// spec'd error classes (bad magic vs truncation vs non-finite payload, ...).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::io_failure: return "io_failure";
    case Errc::bad_magic: return "bad_magic";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::truncated: return "truncated";
    case Errc::non_finite: return "non_finite";
    case Errc::bad_format: return "bad_format";
    case Errc::invalid_config: return "invalid_config";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::single_class_labels: return "single_class_labels";
    case Errc::unknown_path: return "unknown_path";
    case Errc::invalid_flags: return "invalid_flags";
    case Errc::non_finite_loss: return "non_finite_loss";
    case Errc::empty_label: return "empty_label";
  }
  return "unknown";
}

}  // namespace wsvad
