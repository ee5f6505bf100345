#pragma once

#include "focusfree/autograd.hpp"
#include "focusfree/errors.hpp"
#include "focusfree/focusnet.hpp"
#include "focusfree/geometry.hpp"
#include "focusfree/grid.hpp"
#include "focusfree/io.hpp"
#include "focusfree/losses.hpp"
#include "focusfree/metrics.hpp"
#include "focusfree/optim.hpp"
#include "focusfree/supervision.hpp"
#include "focusfree/synthdata.hpp"
#include "focusfree/tensor.hpp"
#include "focusfree/trainer.hpp"
