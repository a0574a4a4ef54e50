#pragma once

#include <array>
#include <cstddef>
#include <string>

namespace cvlnm {

/// The four fusable modules, in fusion-weight order. Argmax ties break
/// toward the lowest index.
enum class ModuleTag : int { Object = 0, Attribute = 1, Relation = 2, Function = 3 };

inline constexpr std::size_t kModuleCount = 4;

inline constexpr std::array<const char*, kModuleCount> kModuleNames{
    "object", "attribute", "relation", "function"};

inline const char* module_name(ModuleTag tag) {
  return kModuleNames[static_cast<std::size_t>(tag)];
}

/// Parses a module name; returns -1 if unknown.
int parse_module_name(const std::string& name);

}  // namespace cvlnm
