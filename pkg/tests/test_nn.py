import numpy as np
import pytest

from gmixseq import nn
from gmixseq import tensor as T
from gmixseq.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def zero_out(linear: nn.Linear):
    linear.weight.data = np.zeros_like(linear.weight.data)
    if linear.bias is not None:
        linear.bias.data = np.zeros_like(linear.bias.data)


# -- positional encoding ---------------------------------------------------

def test_positional_encoding_row_zero_and_base_frequency():
    pe = nn.positional_encoding(50, 8)
    assert np.array_equal(pe[0, 0::2], np.zeros(4))
    assert np.array_equal(pe[0, 1::2], np.ones(4))
    assert np.array_equal(pe[:, 0], np.sin(np.arange(50.0)))


def test_positional_encoding_canonical_table():
    length, d = 33, 16
    ref = np.zeros((length, d))
    for t in range(length):
        for i in range(d // 2):
            angle = t / 10000.0 ** (2 * i / d)
            ref[t, 2 * i] = np.sin(angle)
            ref[t, 2 * i + 1] = np.cos(angle)
    assert np.max(np.abs(nn.positional_encoding(length, d) - ref)) < 1e-12


def test_positional_encoding_errors():
    with pytest.raises(ValueError):
        nn.positional_encoding(4, 5)
    with pytest.raises(ValueError):
        nn.positional_encoding(0, 4)


# -- masks -----------------------------------------------------------------

def test_causal_mask_with_window():
    m = nn.causal_mask(5, window=3)
    allowed = m == 0
    expected = np.array([[1, 0, 0, 0, 0],
                         [1, 1, 0, 0, 0],
                         [1, 1, 1, 0, 0],
                         [0, 1, 1, 1, 0],
                         [0, 0, 1, 1, 1]], dtype=bool)
    assert np.array_equal(allowed, expected)


# -- encoder ---------------------------------------------------------------

def test_zero_residual_branches_leave_only_final_norm(rng):
    stack = nn.EncoderStack(2, 16, 4, 32, rng)
    for layer in stack.layers:
        zero_out(layer.attn.o)
        zero_out(layer.ff.fc2)
    x = Tensor(rng.normal(size=(7, 16)))
    out = nn.encode(stack, x)
    assert np.array_equal(out.data, stack.norm(x).data)


def test_encoder_is_permutation_equivariant(rng):
    stack = nn.EncoderStack(2, 16, 4, 32, rng)
    x = rng.normal(size=(9, 16))
    perm = rng.permutation(9)
    a = nn.encode(stack, Tensor(x)).data[perm]
    b = nn.encode(stack, Tensor(x[perm])).data
    assert np.max(np.abs(a - b)) < 1e-12


def test_encoder_deterministic_and_shape(rng):
    stack = nn.EncoderStack(2, 16, 4, 32, rng)
    x = Tensor(rng.normal(size=(3, 5, 16)))
    a, b = stack(x), stack(x)
    assert a.shape == (3, 5, 16)
    assert np.array_equal(a.data, b.data)


def test_heads_must_divide_model_dim(rng):
    with pytest.raises(ValueError):
        nn.EncoderStack(1, 10, 4, 16, rng)


def test_encoder_grad_through_two_layers(rng):
    stack = nn.EncoderStack(2, 8, 2, 16, rng)
    w = rng.normal(size=(5, 8))
    assert T.grad_check(lambda x: (nn.encode(stack, x) * Tensor(w)).sum(), rng.normal(size=(5, 8))) < 1e-4
    x = Tensor(rng.normal(size=(5, 8)))
    loss = lambda: (stack(x) * Tensor(w)).sum()
    assert nn.param_grad_check(loss, stack.parameters(), n_coords=4, rng=rng) < 1e-4


# -- decoder ---------------------------------------------------------------

def test_decode_step_is_causal(rng):
    stack = nn.DecoderStack(2, 16, 4, 32, rng, cross_window=3)
    prev = rng.normal(size=(8, 16))
    memory = rng.normal(size=(10, 16))
    ref = nn.decode_step(stack, Tensor(prev[:4]), Tensor(memory)).data
    # the full teacher-forced pass agrees at position 4 whatever follows it
    changed = prev.copy()
    changed[4:] = rng.normal(size=(4, 16))
    full = stack(Tensor(changed.reshape(1, 8, 16)), Tensor(memory.reshape(1, 10, 16))).data[0, 3]
    assert np.max(np.abs(full - ref)) < 1e-12
    mem2 = memory.copy()
    mem2[4:] = 99.0
    assert np.array_equal(nn.decode_step(stack, Tensor(prev[:4]), Tensor(mem2)).data, ref)


def test_causality_every_position(rng):
    stack = nn.DecoderStack(1, 8, 2, 16, rng)
    x = rng.normal(size=(1, 6, 8))
    mem = rng.normal(size=(1, 6, 8))
    base = stack(Tensor(x), Tensor(mem)).data
    for t in range(6):
        y, m = x.copy(), mem.copy()
        y[:, t + 1:] += 5.0
        m[:, t + 1:] -= 5.0
        out = stack(Tensor(y), Tensor(m)).data
        assert np.max(np.abs(out[:, : t + 1] - base[:, : t + 1])) < 1e-12


def test_decode_step_past_memory_raises(rng):
    stack = nn.DecoderStack(1, 8, 2, 16, rng)
    with pytest.raises(IndexError):
        nn.decode_step(stack, Tensor(np.zeros((5, 8))), Tensor(np.zeros((4, 8))))


def test_zero_cross_attention_reduces_to_self_attention(rng):
    with_cross = nn.DecoderStack(2, 8, 2, 16, np.random.default_rng(0), use_cross=True)
    plain = nn.DecoderStack(2, 8, 2, 16, np.random.default_rng(1), use_cross=False)
    src = dict(with_cross.named_parameters())
    for name, p in plain.named_parameters():
        p.data = src[name].data.copy()
    for layer in with_cross.layers:
        zero_out(layer.cross_attn.o)
    x = Tensor(rng.normal(size=(2, 5, 8)))
    zeros = Tensor(np.zeros((2, 5, 8)))
    assert np.array_equal(with_cross(x, zeros).data, plain(x, zeros).data)


def test_decoder_grad(rng):
    stack = nn.DecoderStack(2, 8, 2, 16, rng, cross_window=3)
    mem = Tensor(rng.normal(size=(1, 5, 8)))
    w = rng.normal(size=(1, 5, 8))
    assert T.grad_check(lambda x: (stack(x, mem) * Tensor(w)).sum(), rng.normal(size=(1, 5, 8))) < 1e-4
    x = Tensor(rng.normal(size=(1, 5, 8)))
    assert T.grad_check(lambda m: (stack(x, m) * Tensor(w)).sum(), rng.normal(size=(1, 5, 8))) < 1e-4


# -- sequence modules ------------------------------------------------------

def test_autoregressive_step_matches_teacher_forcing(rng):
    dec = nn.AutoregressiveDecoder(4, 3, 6, 16, 4, 32, 2, n_speakers=2, rng=rng)
    dec.speakers.data = rng.normal(size=(2, 4))
    z = Tensor(rng.normal(size=(2, 6)))
    audio = Tensor(rng.normal(size=(2, 7, 3)))
    target = Tensor(rng.normal(size=(2, 7, 4)))
    tf = dec.teacher_forced(z, audio, target, [0, 1]).data
    for t in range(1, 8):
        prev = T.concat([dec.start_frames([0, 1]).reshape(2, 1, 4), target[:, : t - 1]], axis=1)
        step = dec.step(z, audio, prev).data
        assert np.max(np.abs(step - tf[:, t - 1])) < 1e-12


def test_generation_ignores_future_audio(rng):
    dec = nn.AutoregressiveDecoder(4, 3, 6, 16, 4, 32, 2, n_speakers=1, rng=rng)
    z = Tensor(rng.normal(size=(1, 6)))
    audio = rng.normal(size=(1, 9, 3))
    full = dec.generate(z, Tensor(audio), [0])
    short = dec.generate(z, Tensor(audio[:, :5]), [0])
    assert np.array_equal(full[:, :5], short)


def test_unknown_speaker(rng):
    dec = nn.AutoregressiveDecoder(4, 3, 6, 16, 4, 32, 1, n_speakers=2, rng=rng)
    with pytest.raises(KeyError):
        dec.start_frames([2])


def test_sequence_encoder_length_mismatch(rng):
    enc = nn.SequenceEncoder(4, 3, 16, 4, 32, 1, rng)
    with pytest.raises(ValueError):
        enc(Tensor(np.zeros((1, 5, 4))), Tensor(np.zeros((1, 6, 3))))
    assert enc(Tensor(np.zeros((2, 5, 4))), Tensor(np.zeros((2, 5, 3)))).shape == (2, 16)


# -- optimizer -------------------------------------------------------------

def test_adam_first_step_is_lr_times_sign():
    p = nn.param(np.array([1.0, -2.0, 3.0]))
    opt = nn.Adam([p], lr=0.1)
    (p * Tensor([2.0, -5.0, 0.5])).sum().backward()
    opt.step()
    # bias-corrected first step is lr * g / (|g| + eps)
    assert np.allclose(p.data, [0.9, -1.9, 2.9], atol=1e-8)


def test_adam_minimises_quadratic():
    p = nn.param(np.array([3.0, -4.0]))
    opt = nn.Adam([p], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        (p * p).sum().backward()
        opt.step()
    assert np.max(np.abs(p.data)) < 1e-2
