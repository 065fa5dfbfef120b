#pragma once

#include "mergepipe/neural/activation.hpp"
#include "mergepipe/neural/autoencoder.hpp"
#include "mergepipe/neural/losses.hpp"
#include "mergepipe/neural/lstm.hpp"
#include "mergepipe/neural/network.hpp"
#include "mergepipe/neural/params.hpp"
