// Umbrella header for the whole library.
#pragma once

#include "walsnet/checkpoint.hpp"
#include "walsnet/common.hpp"
#include "walsnet/corpus.hpp"
#include "walsnet/evaluator.hpp"
#include "walsnet/featurizer.hpp"
#include "walsnet/gradcheck.hpp"
#include "walsnet/iso639.hpp"
#include "walsnet/layers.hpp"
#include "walsnet/loss.hpp"
#include "walsnet/manifest.hpp"
#include "walsnet/model.hpp"
#include "walsnet/optim.hpp"
#include "walsnet/tensor.hpp"
#include "walsnet/train.hpp"
#include "walsnet/wals.hpp"
