#pragma once

#include <cstdint>

namespace l2tkt {

using SampleId = std::int64_t;

}  // namespace l2tkt
