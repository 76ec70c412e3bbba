"""Heavy-ball SGD and step-decay learning-rate schedule."""


def sgd_momentum_step(weights, grads, lr, momentum):
    """In-place update ``v <- momentum*v + g``, ``w <- w - lr*v``.

    Frozen classifiers and layers without weights are skipped.
    """
    for i, g in enumerate(grads.layers):
        if g is None or weights.layers[i] is None:
            continue
        v = weights.layer_momentum[i]
        v *= momentum
        v += g
        weights.layers[i] -= lr * v
    for b, g in enumerate(grads.classifiers):
        if g is None or weights.frozen[b]:
            continue
        v = weights.classifier_momentum[b]
        v *= momentum
        v += g
        weights.classifiers[b] -= lr * v
    return weights


def lr_schedule(epoch, lr0, factor=0.5, every=20):
    return lr0 * factor ** (epoch // every)
