"""
EIT Visualization
Static figures for a run: reconstructed mask over the mesh, ND spectrum against
mode number and candidate minimum eigenvalues against cap offset
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .mesh import Mesh, RegionMask


class EITVisualizer:
    def __init__(self, output_dir: str = "runs/"):
        self.output_dir = output_dir
        os.makedirs(self.output_dir, exist_ok=True)

        self.color_palette = {
            'domain': '#d9e2ec',
            'mask': '#ff6b35',
            'truth': '#2196f3',
            'primary': '#00a6d6',
            'reference': '#333333',
            'lower': '#4caf50',
            'upper': '#e91e63',
        }

    def _save(self, fig, name: str) -> str:
        path = os.path.join(self.output_dir, name)
        fig.savefig(path, dpi=150, bbox_inches='tight', metadata={'Software': None})
        plt.close(fig)
        return path

    def plot_mask(self, mesh: Mesh, mask: RegionMask, name: str = "mask.png",
                  title: str = "Reconstruction", truth: RegionMask = None) -> str:
        """Mask elements shaded over the mesh, with the true inclusion outlined when known."""
        fig, ax = plt.subplots(figsize=(6, 6))
        colors = np.where(mask.element_flags, 1.0, 0.0)
        cmap = matplotlib.colors.ListedColormap([self.color_palette['domain'], self.color_palette['mask']])
        ax.tripcolor(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles, facecolors=colors,
                     cmap=cmap, vmin=0.0, vmax=1.0, edgecolors='white', linewidth=0.1)
        if truth is not None and not truth.is_empty:
            ax.tricontour(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles,
                          _nodal_indicator(mesh, truth), levels=[0.5],
                          colors=[self.color_palette['truth']], linewidths=1.5)
        ax.set_aspect('equal')
        ax.set_title(f"{title}\n({mask.count} of {mesh.n_triangles} elements)")
        ax.set_xticks([])
        ax.set_yticks([])
        return self._save(fig, name)

    def plot_spectrum(self, spectrum: pd.DataFrame, name: str = "spectrum.png",
                      title: str = "ND spectrum") -> str:
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.semilogy(spectrum['index'] + 1, np.abs(spectrum['eigenvalue']), 'o',
                    color=self.color_palette['primary'], markersize=3, label='computed')
        if 'reference' in spectrum:
            ax.semilogy(spectrum['index'] + 1, spectrum['reference'], '-',
                        color=self.color_palette['reference'], linewidth=1, label='R / n')
        ax.set_xlabel('Index')
        ax.set_ylabel('|Generalized eigenvalue|')
        ax.set_title(title)
        ax.legend()
        ax.grid(alpha=0.3)
        return self._save(fig, name)

    def plot_offsets(self, offsets: pd.DataFrame, name: str = "min_eig_vs_offset.png",
                     title: str = "Minimum eigenvalue against cap offset") -> str:
        fig, ax = plt.subplots(figsize=(7, 4))
        for column, color in (('min_eig_lower', self.color_palette['lower']),
                              ('min_eig_upper', self.color_palette['upper'])):
            if column in offsets and offsets[column].notna().any():
                ax.plot(offsets['offset'], offsets[column], '.', color=color,
                        label=column.replace('min_eig_', ''))
        ax.axhline(0.0, color=self.color_palette['reference'], linewidth=0.8)
        ax.set_yscale('symlog', linthresh=1e-9)
        ax.set_xlabel('Cap offset')
        ax.set_ylabel('Minimum eigenvalue')
        ax.set_title(title)
        ax.legend()
        return self._save(fig, name)


def _nodal_indicator(mesh: Mesh, mask: RegionMask) -> np.ndarray:
    weights = mesh.incidence.T @ (mask.element_flags * mesh.areas)
    totals = mesh.incidence.T @ mesh.areas
    return np.asarray(weights / totals)
