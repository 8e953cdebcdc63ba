from moso.seeds import component_seeds, derive_seed


def test_derived_seeds_are_stable_and_labeled():
    assert derive_seed(7, 'subset', 3) == derive_seed(7, 'subset', 3)
    assert derive_seed(7, 'subset', 3) != derive_seed(7, 'subset', 4)
    assert derive_seed(7, 'subset', 3) != derive_seed(8, 'subset', 3)
    assert 0 <= derive_seed(2 ** 40, 'x') < 2 ** 63


def test_component_seeds_are_distinct():
    seeds = component_seeds(0)
    assert len(set(seeds.values())) == len(seeds)
    assert seeds == component_seeds(0)
