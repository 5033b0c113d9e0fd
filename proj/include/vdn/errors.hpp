#pragma once

#include <stdexcept>
#include <string>

namespace vdn {

// Base for every error raised by the library. `kind()` is a stable name used
// in logs, HTTP payloads and the Python bindings.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define VDN_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                   \
   public:                                                      \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

VDN_DEFINE_ERROR(UnknownNode);
VDN_DEFINE_ERROR(InvalidGraph);
VDN_DEFINE_ERROR(InvalidConfig);
VDN_DEFINE_ERROR(NoValidTarget);
VDN_DEFINE_ERROR(InvalidEpisode);
VDN_DEFINE_ERROR(EmptyDialogue);
VDN_DEFINE_ERROR(GenerationFailed);
VDN_DEFINE_ERROR(NoCandidates);
VDN_DEFINE_ERROR(UnknownCandidate);
VDN_DEFINE_ERROR(IllegalAction);
VDN_DEFINE_ERROR(DivergedLoss);
VDN_DEFINE_ERROR(SequenceTooLong);
VDN_DEFINE_ERROR(DimensionMismatch);
VDN_DEFINE_ERROR(EmptyPath);
VDN_DEFINE_ERROR(InvalidLength);
VDN_DEFINE_ERROR(EmptyCandidate);
VDN_DEFINE_ERROR(EmptyCorpus);
VDN_DEFINE_ERROR(AllEpisodesFailed);
VDN_DEFINE_ERROR(EpisodeFailed);
VDN_DEFINE_ERROR(SessionNotFound);
VDN_DEFINE_ERROR(NoPendingQuestion);
VDN_DEFINE_ERROR(FormatError);

#undef VDN_DEFINE_ERROR

}  // namespace vdn
