#pragma once

#include <memory>

#include "cdnb/models/cama.hpp"
#include "cdnb/models/caam.hpp"
#include "cdnb/models/causaladv.hpp"
#include "cdnb/models/dice.hpp"

namespace cdnb::models {

inline std::unique_ptr<Model> make_model(Variant v, const ModelSpec& spec, std::uint64_t seed) {
    switch (v) {
        case Variant::cama: return std::make_unique<CamaLite>(spec, seed);
        case Variant::caam: return std::make_unique<CaamLite>(spec, seed);
        case Variant::causaladv: return std::make_unique<CausalAdvLite>(spec, seed);
        case Variant::dice: return std::make_unique<DiceLite>(spec, seed);
    }
    throw std::invalid_argument("make_model: unknown variant id " + std::to_string(static_cast<int>(v)));
}

}  // namespace cdnb::models
