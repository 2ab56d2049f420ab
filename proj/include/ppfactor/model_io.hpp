#pragma once

#include "ppfactor/fit.hpp"

#include <string>
#include <string_view>

namespace ppf {

/// Model document: {unit, basis:{a,b,order,knots}, c0, C (q rows of p), U
/// (n rows of p), sigma2, tau, diagnostics}. Doubles round-trip exactly.
std::string model_to_json(const FitResult& fit);

/// Parses a model document. Diagnostics are restored when present.
/// Throws FormatError on malformed input.
FitResult model_from_json(std::string_view text);

void save_model(const FitResult& fit, const std::string& path);
FitResult load_model(const std::string& path);

}  // namespace ppf
