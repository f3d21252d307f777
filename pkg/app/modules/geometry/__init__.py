from app.modules.geometry.patch_grid import (
    ScaleConfig,
    generate_patches,
    multi_scale_patches,
    patch_count,
    scale_region_counts,
)

__all__ = ['ScaleConfig', 'generate_patches', 'multi_scale_patches', 'patch_count', 'scale_region_counts']
