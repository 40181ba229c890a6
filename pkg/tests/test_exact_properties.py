"""Exhaustive exact-arithmetic checks of the privacy-budget facts on toy
mechanisms with enumerable support.  Everything here is Fraction arithmetic:
a failure is a real counterexample, not numerical noise.
"""

from fractions import Fraction

from exact_dp import (additively_bounded, all_events, cell_mask,
                      cellwise_dp_pair, conditional_dp_pair, event_mass,
                      fine_partition_pair, fragmented_cells, ratio_bounded,
                      set_partitions)

RHO = Fraction(3, 2)


class TestConditionalToAdditive:
    """Ratio-bounded on a region of mass 1 - theta => additive slack theta."""

    def test_additive_bound_holds_everywhere(self):
        theta = Fraction(1, 10)
        p1, p2, region = conditional_dp_pair(RHO, theta)
        events = list(all_events(len(p1)))
        region_events = [m for m in events if m & ~region == 0]
        assert ratio_bounded(p1, p2, RHO, region_events)
        assert additively_bounded(p1, p2, RHO, theta, events)

    def test_slack_is_tight(self):
        theta = Fraction(1, 10)
        p1, p2, region = conditional_dp_pair(RHO, theta)
        escape = 1 << 7  # atom where p1 places the escaping mass
        assert event_mass(p1, escape) == RHO * event_mass(p2, escape) + theta

    def test_unconditional_ratio_bound_fails_without_slack(self):
        p1, p2, _ = conditional_dp_pair(RHO, Fraction(1, 10))
        assert not ratio_bounded(p1, p2, RHO, all_events(len(p1)))


class TestRefinement:
    """Per-cell bounds on a fine partition survive every merge of cells."""

    def test_every_coarsening_inherits_the_bound(self):
        fine_p1, fine_p2 = fine_partition_pair(RHO, 6)
        checked = 0
        for grouping in set_partitions(range(6)):
            for group in grouping:
                a = sum(fine_p1[i] for i in group)
                b = sum(fine_p2[i] for i in group)
                assert a <= RHO * b and b <= RHO * a, grouping
            checked += 1
        assert checked == 203  # Bell number of 6 cells

    def test_fine_bound_is_tight(self):
        fine_p1, fine_p2 = fine_partition_pair(RHO, 6)
        assert any(a == RHO * b for a, b in zip(fine_p1, fine_p2))


class TestBoundedResolution:
    """Cells of mass <= eta give additive slack 2 * eta * rho for events
    whose fragments touch at most two cells; full cells contribute none."""

    def test_slack_bound_exhaustive(self):
        p1, p2, cells, eta = cellwise_dp_pair(RHO)
        cell_masks = [cell_mask(c) for c in cells]
        assert ratio_bounded(p1, p2, RHO, cell_masks)
        assert all(event_mass(p, m) <= eta for p in (p1, p2) for m in cell_masks)

        slack = 2 * eta * RHO
        binding = 0
        for mask in all_events(len(p1)):
            if len(fragmented_cells(mask, cells)) > 2:
                continue
            a, b = event_mass(p1, mask), event_mass(p2, mask)
            assert a <= RHO * b + slack, mask
            assert b <= RHO * a + slack, mask
            if a > RHO * b or b > RHO * a:
                binding += 1
        assert binding > 0  # the slack is doing real work

    def test_partition_measurable_events_need_no_slack(self):
        p1, p2, cells, _ = cellwise_dp_pair(RHO)
        union_masks = []
        for grouping in set_partitions(range(len(cells))):
            for group in grouping:
                mask = 0
                for c in group:
                    mask |= cell_mask(cells[c])
                union_masks.append(mask)
        assert ratio_bounded(p1, p2, RHO, union_masks)

    def test_unrestricted_events_can_exceed_the_slack(self):
        # Negative control: an event slicing a heavy atom out of every cell
        # beats 2 * eta * rho, which is why the slack statement is local to
        # the partition granularity.
        p1, p2, cells, eta = cellwise_dp_pair(RHO)
        mask = 0
        for i, p in enumerate(p1):
            if p > 0:
                mask |= 1 << i
        a, b = event_mass(p1, mask), event_mass(p2, mask)
        assert a == 1 and b == 0
        assert a > RHO * b + 2 * eta * RHO
