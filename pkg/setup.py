from setuptools import setup


import os

setup(
    name='mppt_lab',
    version='1.0.0',
    description='PV maximum power point tracking lab: GLLR change detection, ANN GMPP estimation and SMC tracking',
    long_description=open(os.path.join(os.path.dirname(__file__), 'README.md')).read(),
    packages=['models', 'mppt_io'],
    py_modules=['main', 'util', 'controller', 'train', 'evaluate', 'sweep', 'calibrate', 'simulate'],
    license='public',
    keywords='photovoltaic mppt particle-filter change-detection',
    classifiers=[
        'Natural Language :: English',
        'Programming Language :: Python :: 3 :: Only'
    ],
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.5',
        'pyyaml',
        'pandas',
        'scikit-learn',
    ],
    extras_require={'test': ['pytest', 'hypothesis']},
    entry_points={'console_scripts': ['mppt-lab=main:run']},
)
