#ifndef CMGP_CMGP_HPP
#define CMGP_CMGP_HPP

#include "errors.hpp"
#include "numcore.hpp"
#include "rng.hpp"
#include "kernels.hpp"
#include "coregion.hpp"
#include "mlp.hpp"
#include "adam.hpp"
#include "dataset.hpp"
#include "gp_model.hpp"
#include "serialize.hpp"
#include "simgen.hpp"
#include "causal.hpp"
#include "harness.hpp"

#endif
