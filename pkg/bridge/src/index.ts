export { AxisKind, FeatureStack, PfeFormatError, decodePfe, encodePfe, readPfe, writePfe } from './pfe.js'
export { ManifestError, ManifestRecord, parseManifest, totalDuration } from './manifest.js'
export { ExtractorKind, ExtractorSpec, UnknownModel, exportedLayers, knownModels, lookupModel } from './registry.js'
export { SpeechDumpPlan, TokenizationMismatch, contentRows, frameCount, planSpeechDump } from './plan.js'
export { AudioDecodeError, RawAudio, decodeWav, readWav, resampleLinear } from './audio.js'
export { fillUniform, fnv1a, mulberry32, streamSeed } from './rng.js'
export { DumpOptions, DumpReport, ModelLoadError, StubOptions, dumpFeatures, stubDump } from './dump.js'
