from django.test.runner import DiscoverRunner


class PatchcastTestRunner(DiscoverRunner):
    """Skips ``slow`` desk-scale tests unless a ``--tag`` selects them."""

    def __init__(self, *args, tags=None, exclude_tags=None, **kwargs):
        if not tags:
            exclude_tags = set(exclude_tags or ()) | {'slow'}
        super().__init__(*args, tags=tags, exclude_tags=exclude_tags, **kwargs)
