#include "neuropgm/model_tag.hpp"

#include <string>

#include "neuropgm/error.hpp"

namespace neuropgm {

std::string_view to_string(ModelTag tag) {
  switch (tag) {
    case ModelTag::Srm: return "srm";
    case ModelTag::Htfa: return "htfa";
    case ModelTag::Drd: return "drd";
    case ModelTag::Brsa: return "brsa";
    case ModelTag::MnSrm: return "mnsrm";
    case ModelTag::DpSrm: return "dpsrm";
  }
  return "unknown";
}

ModelTag parse_model_tag(std::string_view name) {
  for (ModelTag tag : {ModelTag::Srm, ModelTag::Htfa, ModelTag::Drd, ModelTag::Brsa, ModelTag::MnSrm,
                       ModelTag::DpSrm}) {
    if (to_string(tag) == name) return tag;
  }
  fail(ErrorCode::BadSpec, "unknown model '" + std::string(name) + "'");
}

}  // namespace neuropgm
