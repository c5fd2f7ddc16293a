import pytest
import torch

from patchtraj.errors import ContractError
from patchtraj.msff import (FeaturePyramid, TokenConv, average_experts, enhance, fit_length, resample,
                            select_output, top_down)
from patchtraj.mspe import ExpertTokens

D = 4


def expert(n, tokens, rows=None):
    rows = torch.arange(tokens.shape[0]) if rows is None else torch.tensor(rows)
    return ExpertTokens(n, rows, tokens)


class TestAverage:
    def test_single_expert(self):
        a = torch.randn(2, 3, D)
        w = torch.tensor([[0.0, 1.0], [0.0, 1.0]])
        assert torch.equal(average_experts([expert(1, a)], w, 2), a)

    def test_symmetric_cancellation(self):
        a = torch.randn(2, 3, D)
        w = torch.full((2, 2), 0.5)
        out = average_experts([expert(0, a), expert(1, -a)], w, 2)
        assert torch.allclose(out, torch.zeros_like(a))

    def test_weighted(self):
        a, b = torch.randn(1, 3, D), torch.randn(1, 3, D)
        w = torch.tensor([[0.75, 0.25]])
        out = average_experts([expert(0, a), expert(1, b)], w, 1)
        assert torch.allclose(out, 0.75 * a + 0.25 * b)

    def test_rows_scatter(self):
        a = torch.ones(1, 2, D)
        w = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        out = average_experts([expert(0, a, [0]), expert(1, 2 * a, [1])], w, 2)
        assert torch.equal(out[0], a[0]) and torch.equal(out[1], 2 * a[0])

    def test_empty(self):
        with pytest.raises(ContractError):
            average_experts([], torch.zeros(1, 2), 1)


class TestLateral:
    def test_identity_kernel(self):
        conv = TokenConv(D)
        conv.set_identity()
        x = torch.randn(2, 5, D)
        assert torch.allclose(conv(x), x)

    @pytest.mark.parametrize("n", [1, 2, 4, 5])
    def test_token_count(self, n):
        assert TokenConv(D)(torch.randn(3, n, D)).shape == (3, n, D)

    def test_zero_input_gives_bias(self):
        conv = TokenConv(D)
        out = conv(torch.zeros(1, 3, D))
        assert torch.allclose(out, conv.conv.bias.expand(1, 3, D))


def zero_convs(n):
    convs = [TokenConv(D) for _ in range(n)]
    for c in convs:
        torch.nn.init.zeros_(c.conv.bias)
    return convs


class TestPyramid:
    def test_single_level(self):
        conv = TokenConv(D)
        x = torch.randn(2, 4, D)
        (out,) = top_down([x], [conv])
        assert torch.equal(out, conv(x))

    def test_single_token_upsample_replicates(self):
        x = torch.randn(2, 1, D)
        up = resample(x, 2)
        assert torch.equal(up[:, 0], x[:, 0]) and torch.equal(up[:, 1], x[:, 0])

    def test_zero_inputs_zero_outputs(self):
        levels = [torch.zeros(2, n, D) for n in (1, 2, 4)]
        out = top_down(levels, zero_convs(3))
        assert all(torch.all(o == 0) for o in out)

    def test_top_down_recursion(self):
        convs = [TokenConv(D) for _ in range(3)]
        f = [torch.randn(1, n, D) for n in (1, 2, 4)]
        p = top_down(f, convs)
        p1 = convs[0](f[0])
        p2 = convs[1](f[1] + p1.expand(1, 2, D))
        torch.testing.assert_close(p[0], p1)
        torch.testing.assert_close(p[1], p2)
        torch.testing.assert_close(p[2], convs[2](f[2] + resample(p2, 4)))

    def test_enhance_single(self):
        p = [torch.randn(2, 4, D)]
        assert enhance(p)[0] is p[0]

    def test_enhance_zero(self):
        assert all(torch.all(e == 0) for e in enhance([torch.zeros(1, n, D) for n in (1, 2, 4)]))

    def test_enhance_hand_unrolled(self):
        p1, p2, p3 = (torch.randn(2, n, D) for n in (1, 2, 4))
        e = enhance([p1, p2, p3])
        e3 = p3
        e2 = p2 + resample(e3, 2)
        e1 = p1 + resample(p2 + resample(p3, 2), 1)
        torch.testing.assert_close(e[2], e3)
        torch.testing.assert_close(e[1], e2)
        torch.testing.assert_close(e[0], e1)

    def test_finest_output_carries_coarse_content(self):
        torch.manual_seed(0)
        fpn = FeaturePyramid(3, D).double()
        feats = [torch.randn(1, n, D, dtype=torch.float64) for n in (1, 2, 4)]
        base = fpn(feats)
        for level in (0, 1):
            moved = [f.clone() for f in feats]
            moved[level] += 1.0
            assert not torch.allclose(fpn(moved), base)

    def test_select_output(self):
        levels = [torch.zeros(1, n, D) for n in (1, 2, 4)]
        assert select_output(levels) is levels[2]
        assert select_output(levels[:1]) is levels[0]

    @pytest.mark.parametrize("counts", [(1, 2, 4), (1, 2, 5), (1, 3, 9), (2, 4)])
    def test_shape_law(self, counts):
        fpn = FeaturePyramid(len(counts), D)
        out = fpn([torch.randn(3, n, D) for n in counts])
        assert out.shape == (3, max(counts), D)

    def test_identity_when_single_scale(self):
        fpn = FeaturePyramid(1, D)
        fpn.lateral[0].set_identity()
        fpn.smooth[0].set_identity()
        x = torch.randn(2, 4, D)
        assert torch.allclose(fpn([x]), x)

    def test_fit_length(self):
        x = torch.arange(3.0).view(1, 3, 1)
        assert fit_length(x, 5).flatten().tolist() == [0, 1, 2, 2, 2]
        assert fit_length(x, 2).flatten().tolist() == [0, 1]


def test_gradient_matches_finite_differences():
    torch.manual_seed(1)
    fpn = FeaturePyramid(2, 3).double()
    feats = [torch.randn(2, n, 3, dtype=torch.float64) for n in (2, 4)]
    target = torch.randn(2, 4, 3, dtype=torch.float64)

    def loss():
        return ((fpn(feats) - target) ** 2).sum()

    loss().backward()
    h = 1e-5
    with torch.no_grad():
        for p in fpn.parameters():
            flat, grad = p.view(-1), p.grad.view(-1)
            fd = torch.empty_like(grad)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss().item()
                flat[i] = orig - h
                down = loss().item()
                flat[i] = orig
                fd[i] = (up - down) / (2 * h)
            assert (fd - grad).norm() <= 1e-4 * grad.norm()
