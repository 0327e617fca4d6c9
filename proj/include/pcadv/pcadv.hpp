#pragma once

#include "pcadv/attacks.hpp"
#include "pcadv/dataset.hpp"
#include "pcadv/defenses.hpp"
#include "pcadv/diffnet/adam.hpp"
#include "pcadv/diffnet/autoencoder.hpp"
#include "pcadv/diffnet/checkpoint.hpp"
#include "pcadv/diffnet/classifier.hpp"
#include "pcadv/diffnet/training.hpp"
#include "pcadv/geometry.hpp"
