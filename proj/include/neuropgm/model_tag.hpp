#pragma once

#include <string>
#include <string_view>

namespace neuropgm {

enum class ModelTag { Srm, Htfa, Drd, Brsa, MnSrm, DpSrm };

std::string_view to_string(ModelTag tag);
/// Parses "srm", "htfa", "drd", "brsa", "mnsrm", "dpsrm". Throws BadSpec.
ModelTag parse_model_tag(std::string_view name);

}  // namespace neuropgm
