#!/usr/bin/env node
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { exportMasks } from './exporter.js';
import { ModelLoadError } from './segmentation.js';

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .command('export', 'segment images and write mask archives', (y) =>
      y
        .option('images', { type: 'string', demandOption: true, describe: 'input image directory' })
        .option('out', { type: 'string', demandOption: true, describe: 'output directory' })
        .option('checkpoint', { type: 'string', describe: 'foundation-model checkpoint path' })
        .option('grid', { type: 'number', default: 16, describe: 'prompt points per side' }),
    )
    .demandCommand(1)
    .strict()
    .parse();

  const summary = await exportMasks({
    imageDir: argv.images as string,
    outDir: argv.out as string,
    checkpoint: argv.checkpoint as string | undefined,
    gridPoints: argv.grid as number,
  });
  for (const entry of summary.entries) {
    console.log(`${entry.image}: ${entry.maskCount} masks -> ${entry.archive}, ${entry.edges}`);
  }
  for (const failure of summary.failures) {
    console.error(`FAILED ${failure.image}: ${failure.error}`);
  }
  return summary.failures.length > 0 ? 1 : 0;
}

main()
  .then((code) => process.exit(code))
  .catch((err) => {
    const prefix = err instanceof ModelLoadError ? 'model load error' : 'error';
    console.error(`${prefix}: ${err.message ?? err}`);
    process.exit(err instanceof ModelLoadError ? 2 : 1);
  });
