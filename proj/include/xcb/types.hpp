#pragma once

#include <string_view>

namespace xcb {

/// Hardware component whose performance a workload exercises.
enum class Component { cpu, gpu, memory, storage };

/// Component driving a counter source's clock.
enum class SourceKind { cpu, gpu, timer };

constexpr std::string_view to_string(Component c) noexcept {
  switch (c) {
    case Component::cpu: return "cpu";
    case Component::gpu: return "gpu";
    case Component::memory: return "memory";
    case Component::storage: return "storage";
  }
  return "?";
}

constexpr std::string_view to_string(SourceKind k) noexcept {
  switch (k) {
    case SourceKind::cpu: return "cpu";
    case SourceKind::gpu: return "gpu";
    case SourceKind::timer: return "timer";
  }
  return "?";
}

/// A counter may only observe work on a component its own clock does not drive.
constexpr bool may_observe(SourceKind observer, Component observed) noexcept {
  return !((observer == SourceKind::cpu && observed == Component::cpu) ||
           (observer == SourceKind::gpu && observed == Component::gpu));
}

}  // namespace xcb
