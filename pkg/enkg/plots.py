"""Plotly figures of rollout diagnostics.  These are written as standalone
HTML files next to the other outputs.
"""
import logging

import plotly.graph_objs as go
from plotly.subplots import make_subplots

logger = logging.getLogger(__name__)

# one color per curve, cycled
COLORS = ['#0571b0', '#ca0020', '#92c5de', '#f4a582', '#4dac26', '#b8e186']

def entropy_figure(reports, title='Entropy per Frame'):
    """Two stacked panels: frame-averaged normalized entropy and the share of
    low-entropy sites, one curve per entry of 'reports' (label -> CollapseReport).
    """
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True)

    for ix, (label, report) in enumerate(reports.items()):
        color = COLORS[ix % len(COLORS)]
        frames = report.frames if report.frames is not None else list(range(len(report)))
        fig.append_trace(go.Scatter(
            x=frames,
            y=report.frame_avg_entropy,
            name=f'{label}: mean entropy',
            mode='lines+markers',
            marker=dict(color=color),
            hoverinfo='y',
        ), 1, 1)
        fig.append_trace(go.Scatter(
            x=frames,
            y=report.low_entropy_share,
            name=f'{label}: low-entropy share',
            line=dict(color=color, width=2, dash='dash'),
            hoverinfo='y',
        ), 2, 1)

    fig['layout'].update(title=title)
    fig['layout']['xaxis2'].update(title='Frame', fixedrange=True)
    fig['layout']['yaxis1'].update(
        title='Normalized Entropy',
        hoverformat='.3f',
        range=[0, 1],
        fixedrange=True,
    )
    fig['layout']['yaxis2'].update(
        title='Low-Entropy Share',
        hoverformat='.3f',
        range=[0, 1],
        fixedrange=True,
    )
    fig['layout']['hovermode'] = 'closest'
    return fig

def top_mass_figure(profiles, title='Top-ranked Probability Mass'):
    """Bar chart of mean sorted-probability profiles, one series per entry of
    'profiles' (label -> array of per-rank mass).
    """
    data = []
    for ix, (label, profile) in enumerate(profiles.items()):
        data.append(go.Bar(
            x=list(range(1, len(profile) + 1)),
            y=list(profile),
            name=label,
            marker=dict(color=COLORS[ix % len(COLORS)]),
            hoverinfo='y',
        ))
    layout = go.Layout(
        title=title,
        xaxis=dict(title='Rank', fixedrange=True),
        yaxis=dict(title='Probability', hoverformat='.3f', fixedrange=True),
        barmode='group',
        hovermode='closest',
    )
    return go.Figure(data=data, layout=layout)

def write_figure(fig, path):
    fig.write_html(str(path), include_plotlyjs='cdn')
    logger.info('Wrote figure %s', path)
